"""Score-matched pooling of Bayesian predictive densities.

Combines posterior predictive distributions by log-linear pooling
("locking") and superposition-style pooling ("quacking"), with pool
weights chosen by minimizing an importance-sampled Hyvarinen score --
no normalizing constants required during training.
"""

from .baselines import (
    METHODS,
    LooElpd,
    MethodReport,
    bma_weights,
    evaluate_on_test,
    hyva_select,
    loo_elpd,
    stacking_weights,
)
from .estimators import (
    ScoreEstimate,
    ScoreTable,
    grad_log_predictive,
    hyvarinen_point,
    lap_log_predictive,
    log_predictive_density,
    loo_reweight,
    score_table,
)
from .models import (
    SCENARIOS,
    Draws,
    ScenarioConfig,
    log_marginal_m1,
    log_marginal_m2,
    m1_posterior,
    m2_posterior,
    regression_gibbs,
    rng_stream,
    simulate_scenario,
)
from .optimize import FitResult, fit_locking, fit_quacking, grid_oracle, mirror_descent
from .pooling import (
    GridDensity,
    ObjectiveCoefficients,
    QuackParams,
    SimplexWeights,
    grid_bounds,
    hyva_objective,
    hyva_objective_grad,
    locking_grid,
    locking_scores,
    mixture_grid,
    objective_coefficients,
    predictive_grid,
    quack_objective,
    quacking_scores,
    superposition_grid,
)
from .psis import psis_fit
from .sampling import ModeBoundReport, WeightedSample, mode_bound_check, sample_locked
from .tensor import (
    EvalTensor,
    PointEvaluations,
    build_eval_tensor,
    read_eval_csv,
    write_eval_csv,
)

__version__ = "0.1.0"
