"""Estimation results and their on-disk form."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .observation import pose_from_dict, pose_to_dict

DIAG_FIELDS = ("iteration", "part", "pool_size", "ess", "best_log_weight", "unary_frac", "rand_frac", "pair_frac")


class EstimationError(RuntimeError):
    """No part of the object could be located in the observation."""


@dataclass(eq=False)
class EstimationResult:
    poses: list
    method: str = "mp-rgbd"
    seed: int = 0
    runtime: float = 0.0
    log_weights: list = field(default_factory=list)
    part_names: list = field(default_factory=list)
    header: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)  # rows keyed by DIAG_FIELDS

    def to_dict(self):
        names = self.part_names or [str(i) for i in range(len(self.poses))]
        lw = self.log_weights or [None] * len(self.poses)
        return {
            "method": self.method,
            "seed": self.seed,
            "header": self.header,
            "parts": [
                {"name": n, **pose_to_dict(p), "log_weight": None if w is None else float(w)}
                for n, p, w in zip(names, self.poses, lw)
            ],
        }

    def save(self, path, diagnostics_path=None):
        """Write the result JSON (runtime excluded, so files are reproducible)."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        if diagnostics_path is not None:
            with open(diagnostics_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=DIAG_FIELDS, lineterminator="\n")
                w.writeheader()
                for row in self.diagnostics:
                    w.writerow({k: _fmt(row.get(k)) for k in DIAG_FIELDS})

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        parts = doc["parts"]
        return cls(
            poses=[pose_from_dict(p) for p in parts],
            method=doc["method"],
            seed=doc["seed"],
            log_weights=[p.get("log_weight") for p in parts],
            part_names=[p["name"] for p in parts],
            header=doc.get("header", {}),
        )


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
