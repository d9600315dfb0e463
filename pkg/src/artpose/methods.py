"""Named estimation methods with their default budgets."""

from __future__ import annotations

from .baselines import (
    IcpConfig,
    drn_icp_estimate,
    mp_rgb_icp_estimate,
    parts_pf_estimate,
)
from .inference import AugmentConfig, InferenceConfig, ParticleBP
from .potentials import PotentialConfig

METHODS = ("mp-rgb", "mp-rgb-icp", "mp-rgbd", "mp-rgbd-aug", "parts-pf", "drn-icp")

# (particles, iterations); parts-pf uses the shorter budget of the baseline
DEFAULT_BUDGET = {m: (300, 100) for m in METHODS}
DEFAULT_BUDGET["parts-pf"] = (300, 85)


def inference_config(method, seed=0, n_particles=None, n_iterations=None, base=None, augment=None):
    """The :class:`InferenceConfig` a particle method runs with."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    n, iters = DEFAULT_BUDGET[method]
    kw = base.to_dict() if base is not None else {"jitter_sigma": InferenceConfig().jitter_sigma}
    kw.update(
        seed=seed,
        n_particles=n if n_particles is None else n_particles,
        n_iterations=iters if n_iterations is None else n_iterations,
        mode="rgb" if method.startswith("mp-rgb") and not method.startswith("mp-rgbd") else "rgbd",
        use_messages=method != "parts-pf",
        augment=(augment or AugmentConfig()) if method == "mp-rgbd-aug" else None,
    )
    return InferenceConfig(**kw)


def estimate(method, model, obs, seed=0, n_particles=None, n_iterations=None, potentials=None, icp=None, base=None, augment=None):
    """Run ``method`` on one observation and return its :class:`EstimationResult`."""
    pcfg = potentials or PotentialConfig()
    if method == "drn-icp":
        return drn_icp_estimate(model, obs, icp or IcpConfig(), seed=seed, threshold=pcfg.heatmap_threshold)
    cfg = inference_config(method, seed, n_particles, n_iterations, base, augment)
    if method == "parts-pf":
        return parts_pf_estimate(model, obs, cfg, pcfg)
    if method == "mp-rgb-icp":
        return mp_rgb_icp_estimate(model, obs, cfg, pcfg, icp)
    return ParticleBP(model, obs, cfg, pcfg).run(method)
