"""Comparison methods: multi-restart ICP from segmentation, and independent
per-part particle filters.

Both report an :class:`EstimationResult` like the message-passing engine. Parts
with no usable observation are placed next to an already estimated neighbour
with a joint value drawn uniformly inside its limits.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .inference import InferenceConfig, ParticleBP
from .kinematics import ArticulatedModel, child_pose
from .observation import Observation
from .potentials import PotentialConfig
from .results import EstimationError, EstimationResult
from .se3 import PointCloud, Pose, random_quaternions

MAX_TARGET_POINTS = 2048


@dataclass
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    n_restarts: int = 20
    max_correspondence_dist: float = 0.05

    def __post_init__(self):
        if self.max_iterations < 1 or self.n_restarts < 1:
            raise ValueError("iteration and restart counts must be positive")
        if not (self.convergence_tol > 0 and self.max_correspondence_dist > 0):
            raise ValueError("tolerances must be positive")

    def to_dict(self):
        return asdict(self)


def kabsch(src, dst):
    """Rigid ``(R, t)`` minimizing ``sum |R src + t - dst|^2``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


def _as_points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def _match(tree, pts, max_dist):
    dist, idx = tree.query(pts, distance_upper_bound=max_dist)
    ok = np.isfinite(dist)
    return ok, idx, dist


def icp(source, target, init: Pose, cfg=None, return_history=False):
    """Point-to-point ICP moving ``source`` onto ``target``.

    Returns ``(pose, fitness)`` where fitness is the mean distance of matched
    points. A step that would raise the fitness is rejected and ends the loop,
    so the fitness history never increases.
    """
    cfg = cfg or IcpConfig()
    src = _as_points(source)
    dst = _as_points(target)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("icp needs two non-empty clouds")
    tree = cKDTree(dst)
    pose = init
    ok, idx, dist = _match(tree, pose.apply(src), cfg.max_correspondence_dist)
    if ok.sum() < 3:
        return (init, math.inf, [math.inf]) if return_history else (init, math.inf)
    fitness = float(dist[ok].mean())
    history = [fitness]
    for _ in range(cfg.max_iterations):
        r, t = kabsch(src[ok], dst[idx[ok]])
        m = np.eye(4)
        m[:3, :3], m[:3, 3] = r, t
        cand = Pose.from_matrix(m)
        ok2, idx2, dist2 = _match(tree, cand.apply(src), cfg.max_correspondence_dist)
        if ok2.sum() < 3:
            break
        fit2 = float(dist2[ok2].mean())
        if fit2 > fitness:
            break
        dt, dr = pose_delta(pose, cand)
        pose, ok, idx, fitness = cand, ok2, idx2, fit2
        history.append(fitness)
        if dt + dr < cfg.convergence_tol:
            break
    return (pose, fitness, history) if return_history else (pose, fitness)


def pose_delta(a: Pose, b: Pose):
    rel = a.inverse() @ b
    w = min(abs(float(rel.rotation[0])), 1.0)
    return float(np.linalg.norm(rel.translation)), 2.0 * math.acos(w)


# ---------------------------------------------------------------------------
# observation clouds
# ---------------------------------------------------------------------------


def observed_cloud(obs: Observation, s, threshold=0.5, max_points=MAX_TARGET_POINTS):
    """Back-projected masked depth of part ``s`` (camera frame), strided to ``max_points``."""
    md = obs.masked_depth(s, threshold)
    rows, cols = np.nonzero(md > 0)
    if len(rows) == 0:
        return np.empty((0, 3))
    pts = obs.camera.pixel_centers(rows, cols, md[rows, cols])
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).astype(int)]
    return pts


def fit_part(model_pts, obs_pts, init: Pose, cfg: IcpConfig):
    """ICP of the posed model cloud onto the observation; returns the part pose and fitness."""
    return icp(model_pts, obs_pts, init, cfg)


def fill_occluded(model: ArticulatedModel, poses, rng):
    """Place every ``None`` pose from a random estimated neighbour (in place)."""
    if all(p is None for p in poses):
        raise EstimationError("no part of the object is visible")
    while any(p is None for p in poses):
        for s in range(len(poses)):
            if poses[s] is not None:
                continue
            done = [(t, j) for t, j in model.neighbors(s) if poses[t] is not None]
            if done:
                t, joint = done[int(rng.integers(len(done)))]
                poses[s] = child_pose(poses[t], joint, float(joint.sample(rng)))
    return poses


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------


def drn_icp_estimate(model: ArticulatedModel, obs: Observation, cfg=None, seed=0, threshold=0.5) -> EstimationResult:
    """Segmentation-initialized ICP with random-orientation restarts."""
    cfg = cfg or IcpConfig()
    start = time.perf_counter()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(model.parts) + 1)]
    poses, fits = [None] * len(model.parts), [None] * len(model.parts)
    for s, part in enumerate(model.parts):
        target = observed_cloud(obs, s, threshold)
        if len(target) < 3:
            continue
        model_pts = part.cloud.points
        centre = target.mean(axis=0)
        local_centre = model_pts.mean(axis=0)
        best = (math.inf, None)
        for q in random_quaternions(rngs[s], cfg.n_restarts):
            init = Pose(np.zeros(3), q)
            init = Pose(centre - init.apply(local_centre), q)
            est, fit = fit_part(model_pts, target, init, cfg)
            # strict < keeps the lowest restart index on ties
            if fit < best[0]:
                best = (fit, est)
        if best[1] is not None:
            poses[s], fits[s] = best[1], best[0]
    fill_occluded(model, poses, rngs[-1])
    return EstimationResult(
        poses=poses,
        method="drn-icp",
        seed=seed,
        runtime=time.perf_counter() - start,
        log_weights=[None if f is None else -f for f in fits],
        part_names=[p.name for p in model.parts],
        header={"icp": cfg.to_dict(), "heatmap_threshold": threshold},
    )


def parts_pf_config(**kw) -> InferenceConfig:
    base = {"n_particles": 300, "n_iterations": 85, "use_messages": False, "augment": None}
    base.update(kw)
    return InferenceConfig(**base)


def parts_pf_estimate(model: ArticulatedModel, obs: Observation, cfg=None, potentials=None) -> EstimationResult:
    """Independent particle filters, one per part (unary weights only)."""
    cfg = cfg or parts_pf_config()
    if cfg.use_messages or cfg.augment is not None:
        cfg = parts_pf_config(**{**cfg.to_dict(), "use_messages": False, "augment": None})
    engine = ParticleBP(model, obs, cfg, potentials)
    res = engine.run("parts-pf")
    # invisible parts carry no information of their own; attach them to a neighbour estimate
    hidden = [s for s in range(len(model.parts)) if not engine.visible(s)]
    if hidden:
        poses = [None if s in hidden else p for s, p in enumerate(res.poses)]
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(len(model.parts) + 1)[-1])
        res.poses = fill_occluded(model, poses, rng)
        res.log_weights = [None if s in hidden else w for s, w in enumerate(res.log_weights)]
    return res


def refine_with_icp(model: ArticulatedModel, obs: Observation, result: EstimationResult, cfg=None, threshold=0.5):
    """ICP refinement of each visible part of ``result`` (the RGB-only estimate's
    depth is weak, so each part is first shifted onto the observed centroid)."""
    cfg = cfg or IcpConfig()
    poses = list(result.poses)
    for s, part in enumerate(model.parts):
        target = observed_cloud(obs, s, threshold)
        if len(target) < 3:
            continue
        model_pts = part.cloud.points
        est = poses[s]
        shifted = Pose(est.translation + target.mean(axis=0) - est.apply(model_pts).mean(axis=0), est.rotation)
        cands = [fit_part(model_pts, target, init, cfg) for init in (est, shifted)]
        pose, fit = min(cands, key=lambda c: c[1])
        if math.isfinite(fit):
            poses[s] = pose
    header = dict(result.header, icp=cfg.to_dict())
    return EstimationResult(
        poses=poses,
        method="mp-rgb-icp",
        seed=result.seed,
        runtime=result.runtime,
        log_weights=result.log_weights,
        part_names=result.part_names,
        header=header,
        diagnostics=result.diagnostics,
    )


def mp_rgb_icp_estimate(model, obs, cfg=None, potentials=None, icp_cfg=None) -> EstimationResult:
    start = time.perf_counter()
    cfg = cfg or InferenceConfig(mode="rgb")
    if cfg.mode != "rgb":
        cfg = InferenceConfig(**{**cfg.to_dict(), "mode": "rgb"})
    pcfg = potentials or PotentialConfig()
    res = ParticleBP(model, obs, cfg, pcfg).run("mp-rgb")
    out = refine_with_icp(model, obs, res, icp_cfg, pcfg.heatmap_threshold)
    out.runtime = time.perf_counter() - start
    return out
