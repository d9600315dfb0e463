"""Pose estimation of articulated objects by particle belief propagation.

Quick start::

    from artpose import load_clamp, make_scene, estimate, evaluate

    model = load_clamp()
    scene = make_scene(model, seed=0, regime="cluttered")
    result = estimate("mp-rgbd", model, scene.observation, seed=0)
    print(evaluate(model, scene.gt, result.poses).object_m)
"""

from .assets import load_clamp
from .baselines import IcpConfig, drn_icp_estimate, icp, parts_pf_estimate
from .inference import AugmentConfig, InferenceConfig, ParticleBP, run
from .kinematics import ArticulatedModel, Joint, load_urdf, parse_urdf
from .methods import METHODS, estimate
from .metrics import (
    evaluate,
    matching_error,
    pass_rate,
    run_suite,
    symmetric_matching_error,
)
from .observation import CorruptionSpec, Observation, make_scene, synthesize
from .potentials import PotentialConfig
from .rendering import PinholeCamera, render
from .results import EstimationError, EstimationResult
from .se3 import PointCloud, Pose, TriangleMesh

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "ArticulatedModel",
    "AugmentConfig",
    "CorruptionSpec",
    "EstimationError",
    "EstimationResult",
    "IcpConfig",
    "InferenceConfig",
    "Joint",
    "Observation",
    "ParticleBP",
    "PinholeCamera",
    "PointCloud",
    "Pose",
    "PotentialConfig",
    "TriangleMesh",
    "drn_icp_estimate",
    "estimate",
    "evaluate",
    "icp",
    "load_clamp",
    "load_urdf",
    "make_scene",
    "matching_error",
    "parse_urdf",
    "parts_pf_estimate",
    "pass_rate",
    "render",
    "run",
    "run_suite",
    "symmetric_matching_error",
    "synthesize",
]
