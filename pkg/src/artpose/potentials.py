"""Unary (heatmap Jaccard x depth) and pairwise (articulation) potentials.

Scalar functions return probabilities and are used at API edges and as test
oracles. :class:`UnaryEvaluator` and :func:`log_pairwise_matrix` are the
batched log-space versions used by inference; every log factor is floored at
:data:`LOG_FLOOR` so that ``exp`` stays representable and ordering survives.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .kinematics import Joint, joint_residual, limit_violation, violation_matrix
from .observation import Observation
from .rendering import BatchScorer, PinholeCamera, render
from .se3 import Pose, TriangleMesh

LOG_FLOOR = -700.0


@dataclass
class PotentialConfig:
    depth_max_error: float = 0.5
    pairwise_scale: float = 10.0
    heatmap_threshold: float = 0.5
    depth_scale: float = 100.0  # per meter; cm-level depth errors must matter

    def __post_init__(self):
        if self.depth_max_error <= 0:
            raise ValueError("depth_max_error must be > 0")
        if self.pairwise_scale <= 0:
            raise ValueError("pairwise_scale must be > 0")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be > 0")

    def to_dict(self):
        return asdict(self)


def _floor_log(x):
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(x), LOG_FLOOR)


def jaccard(mask, heatmap):
    """Soft IoU between a binary mask and a heatmap; 0 when both are empty."""
    mask = np.asarray(mask, dtype=bool)
    heatmap = np.asarray(heatmap, dtype=float)
    inter = heatmap[mask].sum()
    union = mask.sum() + heatmap.sum() - inter
    return float(inter / union) if union > 0 else 0.0


def unary_rgb(mesh: TriangleMesh, hypothesis: Pose, heatmap, cam: PinholeCamera) -> float:
    mask, _ = render(mesh, hypothesis, cam)
    return jaccard(mask, heatmap)


def depth_score(rendered, masked, cfg: PotentialConfig) -> float:
    both = (rendered > 0) & (masked > 0)
    if not both.any():
        return math.exp(-cfg.depth_scale * cfg.depth_max_error)
    return math.exp(-cfg.depth_scale * float(np.abs(rendered[both] - masked[both]).mean()))


def unary_depth(mesh: TriangleMesh, hypothesis: Pose, masked, cam: PinholeCamera, cfg=None) -> float:
    cfg = cfg or PotentialConfig()
    _, rendered = render(mesh, hypothesis, cam)
    return depth_score(rendered, np.asarray(masked, dtype=float), cfg)


def unary(mesh: TriangleMesh, s: int, hypothesis: Pose, obs: Observation, cfg=None, mode="rgbd") -> float:
    """Unary potential of part ``s``; ``mode="rgb"`` drops the depth factor."""
    cfg = cfg or PotentialConfig()
    mask, rendered = render(mesh, hypothesis, obs.camera)
    rgb = jaccard(mask, obs.heatmaps[s])
    if mode == "rgb":
        return rgb
    return rgb * depth_score(rendered, obs.masked_depth(s, cfg.heatmap_threshold), cfg)


def pairwise(parent_hyp: Pose, child_hyp: Pose, joint: Joint, cfg=None) -> float:
    cfg = cfg or PotentialConfig()
    q_hat, off = joint_residual(parent_hyp, joint, child_hyp)
    return math.exp(-cfg.pairwise_scale * (off + limit_violation(joint, q_hat)))


# ---------------------------------------------------------------------------
# batched log-space versions
# ---------------------------------------------------------------------------


class UnaryEvaluator:
    """Log unary potentials for particle batches of every part of one model."""

    def __init__(self, model, obs: Observation, cfg=None, mode="rgbd"):
        if mode not in ("rgb", "rgbd"):
            raise ValueError(f"unknown unary mode {mode!r}")
        self.cfg = cfg or PotentialConfig()
        self.mode = mode
        self.obs = obs
        self.heat = [np.ascontiguousarray(h, dtype=float) for h in obs.heatmaps]
        self.heat_sum = [float(h.sum()) for h in self.heat]
        self.masked = [np.ascontiguousarray(obs.masked_depth(s, self.cfg.heatmap_threshold)) for s in range(len(obs))]
        # back-face culling is exact for closed, outward-wound meshes
        self.scorers = [BatchScorer(p.mesh, obs.camera, cull=_cullable(p.mesh)) for p in model.parts]

    def terms(self, s, translations, quaternions):
        """``(log φ_rgb, log φ_depth)`` arrays for part ``s``."""
        inter, mask, derr, overlap = self.scorers[s](translations, quaternions, self.heat[s], self.masked[s])
        union = mask + self.heat_sum[s] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(union > 0, inter / union, 0.0)
            mean_err = np.where(overlap > 0, derr / np.maximum(overlap, 1.0), self.cfg.depth_max_error)
        return _floor_log(iou), np.maximum(-self.cfg.depth_scale * mean_err, LOG_FLOOR)

    def __call__(self, s, translations, quaternions):
        log_rgb, log_depth = self.terms(s, translations, quaternions)
        if self.mode == "rgb":
            return log_rgb
        return log_rgb + log_depth


def _cullable(mesh):
    return mesh.is_closed() and mesh.outward()


def log_pairwise_matrix(parent_t, parent_q, child_t, child_q, joint: Joint, cfg=None):
    """``log ψ`` for all (parent, child) particle pairs, rows = parents."""
    cfg = cfg or PotentialConfig()
    v = violation_matrix(parent_t, parent_q, child_t, child_q, joint)
    return np.maximum(-cfg.pairwise_scale * v, LOG_FLOOR)
