"""Run manifests: resolved configuration plus a content hash.

Every output file written by the CLI carries the manifest hash in a
header comment, so a result table can always be traced back to the exact
command, configuration, and root seed that produced it.  The hash covers
only (command, config, root_seed, version) -- never timestamps -- so
reruns with the same inputs yield byte-identical data files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["RunManifest"]


def _canonical(config: dict) -> str:
    return json.dumps(config, sort_keys=True, default=str)


@dataclass
class RunManifest:
    command: str
    config: dict
    root_seed: int
    version: str
    started: str = ""
    finished: str = ""
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        payload = _canonical(
            {
                "command": self.command,
                "config": self.config,
                "root_seed": self.root_seed,
                "version": self.version,
            }
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def mark_started(self) -> None:
        self.started = datetime.now(timezone.utc).isoformat()

    def mark_finished(self) -> None:
        self.finished = datetime.now(timezone.utc).isoformat()

    def note(self, key: str, value) -> None:
        """Attach free-form run info (wall clock, diagnostics counts...)."""
        self._extra[key] = value

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "root_seed": self.root_seed,
            "version": self.version,
            "hash": self.hash,
            "started": self.started,
            "finished": self.finished,
            **({"run_info": self._extra} if self._extra else {}),
        }

    def write(self, outdir: str | Path) -> Path:
        path = Path(outdir) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
