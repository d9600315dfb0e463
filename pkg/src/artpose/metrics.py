"""Matching errors, pass rates and the evaluation harness.

``m`` is the mean distance between corresponding model points placed at the
ground-truth and estimated poses; ``m_sym`` replaces the correspondence by the
nearest ground-truth point, which is what axially symmetric parts are scored
with.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .methods import estimate
from .results import EstimationError
from .se3 import PointCloud, Pose

CSV_FIELDS = ("scene_id", "object", "part", "method", "seed", "m_cm", "m_sym_cm", "pass4", "runtime_s", "error")
PASS_THRESHOLD = 0.04
BRUTE_FORCE_MAX = 256


def _points(cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("matching error needs a non-empty model cloud")
    return pts


def matching_error(cloud, gt: Pose, est: Pose) -> float:
    pts = _points(cloud)
    return float(np.linalg.norm(est.apply(pts) - gt.apply(pts), axis=1).mean())


def nearest_distances(query, ref):
    """Distance from each query point to its nearest reference point."""
    if len(ref) <= BRUTE_FORCE_MAX:
        d = np.linalg.norm(query[:, None, :] - ref[None, :, :], axis=2)
        return d.min(axis=1)
    return cKDTree(ref).query(query)[0]


def symmetric_matching_error(cloud, gt: Pose, est: Pose) -> float:
    pts = _points(cloud)
    return float(nearest_distances(est.apply(pts), gt.apply(pts)).mean())


@dataclass
class MetricReport:
    """Per-part errors of one estimate; object errors are means over parts."""

    m: list
    m_sym: list
    symmetric: list = field(default_factory=list)
    part_names: list = field(default_factory=list)
    threshold: float = PASS_THRESHOLD

    def __post_init__(self):
        if len(self.m) != len(self.m_sym) or not self.m:
            raise ValueError("need one m and one m_sym per part")
        self.symmetric = list(self.symmetric) or [False] * len(self.m)
        for a, b in zip(self.m, self.m_sym):
            # nearest point is never farther than the corresponding one
            assert b <= a + 1e-12, f"m_sym {b} exceeds m {a}"

    @property
    def scores(self):
        """Per-part error under the metric each part is judged by."""
        return [s if sym else m for m, s, sym in zip(self.m, self.m_sym, self.symmetric)]

    @property
    def object_m(self):
        return float(np.mean(self.m))

    @property
    def object_m_sym(self):
        return float(np.mean(self.m_sym))

    @property
    def score(self):
        return float(np.mean(self.scores))

    @property
    def passed(self):
        return self.score < self.threshold


def evaluate(model, gt, est) -> MetricReport:
    if len(gt) != len(model.parts) or len(est) != len(model.parts):
        raise ValueError("need one ground-truth and one estimated pose per part")
    m = [matching_error(p.cloud, g, e) for p, g, e in zip(model.parts, gt, est)]
    ms = [symmetric_matching_error(p.cloud, g, e) for p, g, e in zip(model.parts, gt, est)]
    return MetricReport(m, ms, [p.symmetric for p in model.parts], [p.name for p in model.parts])


def pass_rate(reports, threshold=PASS_THRESHOLD) -> float:
    """Fraction of reports (or bare errors in meters) below ``threshold``."""
    reports = list(reports)
    if not reports:
        raise ValueError("pass_rate needs at least one report")
    errs = [r.score if isinstance(r, MetricReport) else float(r) for r in reports]
    return sum(e < threshold for e in errs) / len(errs)


def threshold_curve(reports, thresholds=None):
    """``[(threshold_m, pass_rate)]``; default 0 to 10 cm in 0.5 cm steps."""
    if thresholds is None:
        thresholds = [k * 0.005 for k in range(21)]
    return [(float(t), pass_rate(reports, t)) for t in thresholds]


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


@dataclass
class SuiteRow:
    scene_id: str
    object: str
    method: str
    seed: int
    regime: str
    report: MetricReport | None
    runtime: float | None
    error: str = ""

    def csv_rows(self, per_part=False):
        base = {"scene_id": self.scene_id, "object": self.object, "method": self.method, "seed": self.seed}
        rt = "" if self.runtime is None else f"{self.runtime:.3f}"
        if self.report is None:
            return [{**base, "part": "object", "m_cm": "", "m_sym_cm": "", "pass4": "", "runtime_s": rt, "error": self.error}]
        r = self.report
        rows = [
            {
                **base,
                "part": "object",
                "m_cm": f"{100 * r.object_m:.4f}",
                "m_sym_cm": f"{100 * r.object_m_sym:.4f}",
                "pass4": int(r.passed),
                "runtime_s": rt,
                "error": "",
            }
        ]
        if per_part:
            for name, m, ms, sc in zip(r.part_names, r.m, r.m_sym, r.scores):
                rows.append(
                    {
                        **base,
                        "part": name,
                        "m_cm": f"{100 * m:.4f}",
                        "m_sym_cm": f"{100 * ms:.4f}",
                        "pass4": int(sc < r.threshold),
                        "runtime_s": "",
                        "error": "",
                    }
                )
        return rows


@dataclass
class SuiteReport:
    rows: list

    def reports(self, method, regime=None):
        return [
            r.report
            for r in self.rows
            if r.method == method and r.report is not None and (regime is None or r.regime == regime)
        ]

    def methods(self):
        return list(dict.fromkeys(r.method for r in self.rows))

    def mean_m(self, method, regime=None):
        rs = self.reports(method, regime)
        return float(np.mean([r.object_m for r in rs])) if rs else math.nan

    def to_csv(self, per_part=False):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerows(row.csv_rows(per_part))
        return buf.getvalue()

    def summary(self):
        return summary_table(self)

    def curve_csv(self, method):
        lines = ["threshold_cm,pass_rate"]
        rs = self.reports(method)
        for t, p in threshold_curve(rs) if rs else []:
            lines.append(f"{100 * t:.1f},{p:.6f}")
        return "\n".join(lines) + "\n"


def _mean_std(vals):
    if not vals:
        return "n/a"
    return f"{np.mean(vals):.2f} +/- {np.std(vals):.2f}"


def summary_table(suite: SuiteReport):
    """Aligned text: per method, m and m_sym (cm) for cluttered, uncluttered and all scenes."""
    cols = [("cluttered", "cluttered"), ("uncluttered", "uncluttered"), ("overall", None)]
    header = ["method"]
    for name, _ in cols:
        header += [f"{name} m", f"{name} m_sym"]
    header.append("pass@4cm")
    table = [header]
    for method in suite.methods():
        line = [method]
        for _, regime in cols:
            rs = suite.reports(method, regime) if regime != "uncluttered" else (
                suite.reports(method, "uncluttered") + suite.reports(method, "clean")
            )
            line += [_mean_std([100 * r.object_m for r in rs]), _mean_std([100 * r.object_m_sym for r in rs])]
        rs = suite.reports(method)
        line.append(f"{pass_rate(rs):.3f}" if rs else "n/a")
        failed = sum(1 for r in suite.rows if r.method == method and r.report is None)
        if failed:
            line[0] += f" ({failed} failed)"
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table) + "\n"


def _run_one(scene, method, seed, kw):
    start = time.perf_counter()
    name = scene.model.name
    try:
        res = estimate(method, scene.model, scene.observation, seed=seed, **kw)
    except EstimationError as exc:
        return SuiteRow(scene.scene_id, name, method, seed, scene.regime, None, None, f"estimation failed: {exc}")
    report = evaluate(scene.model, scene.gt, res.poses)
    return SuiteRow(scene.scene_id, name, method, seed, scene.regime, report, time.perf_counter() - start)


def run_suite(scenes, methods, seeds=(0,), threads=1, **estimate_kw) -> SuiteReport:
    """Estimate and score every (scene, method, seed); rows keep that order."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("run_suite needs at least one scene")
    jobs = [(sc, m, s) for sc in scenes for m in methods for s in seeds]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(lambda j: _run_one(*j, estimate_kw), jobs))
    else:
        rows = [_run_one(*j, estimate_kw) for j in jobs]
    return SuiteReport(rows)
