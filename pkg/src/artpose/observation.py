"""Observations: per-part heatmaps plus a depth image.

Heatmaps here come from an oracle: the visible-surface mask of each part at
its ground-truth pose, degraded by blur, noise, occluding rectangles and part
dropout. Files written by other tools can be read with :func:`load_heatmap`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .kinematics import ArticulatedModel, load_urdf
from .rendering import PinholeCamera, load_depth_pgm, render_depth, save_depth_pgm
from .se3 import Pose, quat_from_axis_angle, quat_mul

DEFAULT_THRESHOLD = 0.5


class HeatmapFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Observation:
    heatmaps: np.ndarray  # (P, H, W) float32 scores in [0, 1]
    depth: np.ndarray  # (H, W) meters, 0 = no return
    camera: PinholeCamera

    def __post_init__(self):
        hm = np.asarray(self.heatmaps)
        depth = np.asarray(self.depth, dtype=float)
        if hm.ndim != 3 or hm.shape[1:] != self.camera.shape or depth.shape != self.camera.shape:
            raise ValueError(f"raster shapes {hm.shape}, {depth.shape} do not match camera {self.camera.shape}")
        if np.any(~np.isfinite(hm)) or hm.min(initial=0) < 0 or hm.max(initial=0) > 1:
            raise ValueError("heatmap scores must lie in [0, 1]")
        if np.any(~np.isfinite(depth)) or depth.min(initial=0) < 0:
            raise ValueError("depth must be finite and non-negative")
        object.__setattr__(self, "heatmaps", hm)
        object.__setattr__(self, "depth", depth)

    def __len__(self):
        return len(self.heatmaps)

    def masked_depth(self, s, threshold=DEFAULT_THRESHOLD):
        return masked_depth(self.heatmaps[s], self.depth, threshold)


@dataclass
class CorruptionSpec:
    """Scene degradations standing in for clutter and a real segmenter.

    ``occlusion_rects`` are ``(u0, v0, u1, v1, depth)`` pixel boxes (half-open)
    with the occluder's depth in meters. ``background_depth`` puts a
    fronto-parallel support surface behind the scene (``None``: empty space).
    """

    occlusion_rects: list = field(default_factory=list)
    blur_radius: int = 0
    noise_sigma: float = 0.0
    depth_noise_sigma: float = 0.0
    dropout_parts: list = field(default_factory=list)
    background_depth: float | None = None

    def __post_init__(self):
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if self.noise_sigma < 0 or self.depth_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        self.occlusion_rects = [tuple(r) for r in self.occlusion_rects]
        self.dropout_parts = [int(p) for p in self.dropout_parts]
        if self.background_depth is not None and not self.background_depth > 0:
            raise ValueError("background_depth must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["occlusion_rects"] = [list(r) for r in self.occlusion_rects]
        return d


def visible_masks(model: ArticulatedModel, poses, cam: PinholeCamera, rects=()):
    """Per-part visible masks and the scene z-buffer (occluders included)."""
    depths = np.stack([render_depth(p.mesh, x, cam) for p, x in zip(model.parts, poses)])
    big = np.where(depths > 0, depths, np.inf)
    owner = np.argmin(big, axis=0)
    zbuf = np.min(big, axis=0)
    owner[~np.isfinite(zbuf)] = -1
    for u0, v0, u1, v1, d in rects:
        sl = (slice(max(int(v0), 0), max(int(v1), 0)), slice(max(int(u0), 0), max(int(u1), 0)))
        front = d < zbuf[sl]
        zbuf[sl] = np.where(front, d, zbuf[sl])
        owner[sl] = np.where(front, -2, owner[sl])
    zbuf[~np.isfinite(zbuf)] = 0.0
    masks = np.stack([owner == s for s in range(len(model.parts))])
    return masks, zbuf


def synthesize(model: ArticulatedModel, gt, cam: PinholeCamera, spec: CorruptionSpec | None = None, seed=0):
    """Oracle observation of ``model`` at ground-truth poses ``gt``.

    Returns ``(observation, gt)``.
    """
    gt = list(gt)
    if len(gt) != len(model.parts):
        raise ValueError(f"expected {len(model.parts)} ground-truth poses, got {len(gt)}")
    spec = spec or CorruptionSpec()
    rng = np.random.default_rng(seed)
    masks, zbuf = visible_masks(model, gt, cam, spec.occlusion_rects)

    heat = masks.astype(float)
    if spec.blur_radius > 0:
        size = (1, 2 * spec.blur_radius + 1, 2 * spec.blur_radius + 1)
        heat = ndimage.uniform_filter(heat, size=size, mode="constant")
    if spec.noise_sigma > 0:
        heat = heat + rng.normal(0.0, spec.noise_sigma, heat.shape)
    heat = np.clip(heat, 0.0, 1.0)
    for u0, v0, u1, v1, _ in spec.occlusion_rects:
        heat[:, max(int(v0), 0) : max(int(v1), 0), max(int(u0), 0) : max(int(u1), 0)] = 0.0
    for s in spec.dropout_parts:
        heat[s] = 0.0

    depth = zbuf.copy()
    if spec.background_depth is not None:
        depth[depth == 0] = spec.background_depth
    if spec.depth_noise_sigma > 0:
        hit = depth > 0
        depth[hit] += rng.normal(0.0, spec.depth_noise_sigma, int(hit.sum()))
        depth = np.clip(depth, 0.0, None)
    return Observation(heat.astype(np.float32), depth, cam), gt


def masked_depth(heatmap, depth, threshold=DEFAULT_THRESHOLD):
    """Depth restricted to pixels whose heat reaches ``threshold``."""
    return np.where(np.asarray(heatmap) >= threshold, depth, 0.0)


# ---------------------------------------------------------------------------
# scene generation helpers
# ---------------------------------------------------------------------------


def default_camera():
    return PinholeCamera(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)


def sample_object_pose(rng, depth_range=(0.45, 0.55), lateral=(0.05, 0.04), max_tilt=0.5):
    """Root pose of an object lying roughly face-on to the camera."""
    # flip so the object's +z faces the camera, then spin in-plane and tilt
    face = np.array([0.0, 1.0, 0.0, 0.0])
    yaw = quat_from_axis_angle([0.0, 0.0, 1.0], rng.uniform(-math.pi, math.pi))
    tilt_axis = np.array([math.cos(a := rng.uniform(0, 2 * math.pi)), math.sin(a), 0.0])
    tilt = quat_from_axis_angle(tilt_axis, rng.uniform(0.0, max_tilt))
    q = quat_mul(tilt, quat_mul(face, yaw))
    t = [rng.uniform(-lateral[0], lateral[0]), rng.uniform(-lateral[1], lateral[1]), rng.uniform(*depth_range)]
    return Pose(t, q)


def sample_configuration(model: ArticulatedModel, rng, **pose_kwargs):
    """Random root pose and joint values; returns ``(poses, joint_values)``."""
    root = sample_object_pose(rng, **pose_kwargs)
    q = [float(e.joint.sample(rng)) for e in model.edges]
    return model.forward_kinematics(root, q), q


def clutter_spec(
    model,
    gt,
    cam,
    rng,
    dropout_prob=0.5,
    n_rects=(1, 2),
    blur_radius=2,
    noise_sigma=0.05,
    depth_noise=0.003,
    background=(0.02, 0.10),
):
    """The "cluttered" preset: occluding boxes over parts, maybe one part dropped,
    a softer noisier segmenter and a support surface ``background`` meters
    (uniform range) behind the object; ``background=None`` leaves empty space."""
    masks, zbuf = visible_masks(model, gt, cam)
    rects = []
    for _ in range(rng.integers(n_rects[0], n_rects[1] + 1)):
        s = int(rng.integers(len(model.parts)))
        rows, cols = np.nonzero(masks[s])
        if len(rows) == 0:
            continue
        # box over a random fraction of the part's extent, from a random side
        r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
        frac = rng.uniform(0.3, 0.6)
        if rng.random() < 0.5:
            cut = int(c0 + frac * (c1 - c0))
            box = (c0, r0, cut, r1) if rng.random() < 0.5 else (cut, r0, c1, r1)
        else:
            cut = int(r0 + frac * (r1 - r0))
            box = (c0, r0, c1, cut) if rng.random() < 0.5 else (c0, cut, c1, r1)
        front = float(zbuf[masks[s]].min()) - 0.03
        rects.append((int(box[0]), int(box[1]), int(box[2]), int(box[3]), max(front, 0.05)))
    dropout = [int(rng.integers(len(model.parts)))] if rng.random() < dropout_prob else []
    bg = None if background is None else float(zbuf[zbuf > 0].max()) + rng.uniform(*background)
    return CorruptionSpec(
        rects,
        blur_radius=blur_radius,
        noise_sigma=noise_sigma,
        depth_noise_sigma=depth_noise,
        dropout_parts=dropout,
        background_depth=bg,
    )


def corruption_preset(regime, model, gt, cam, rng):
    if regime in ("clean", "uncluttered"):
        return CorruptionSpec()
    if regime == "cluttered":
        return clutter_spec(model, gt, cam, rng)
    raise ValueError(f"unknown clutter regime {regime!r}")


@dataclass(eq=False)
class Scene:
    scene_id: str
    model: ArticulatedModel
    observation: Observation
    gt: list
    regime: str = "clean"
    seed: int = 0
    urdf: str = ""
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    joint_values: list = field(default_factory=list)


def make_scene(model, seed, regime="clean", cam=None, scene_id=None, urdf=""):
    cam = cam or default_camera()
    rng = np.random.default_rng(seed)
    gt, q = sample_configuration(model, rng)
    spec = corruption_preset(regime, model, gt, cam, rng)
    obs, gt = synthesize(model, gt, cam, spec, seed=int(rng.integers(2**31)))
    return Scene(scene_id or f"scene_{seed:04d}", model, obs, gt, regime, seed, str(urdf), spec, q)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_heatmap(h, path):
    h = np.asarray(h, dtype="<f4")
    rows, cols = h.shape
    Path(path).write_bytes(f"HMAP {cols} {rows}\n".encode() + h.tobytes(order="C"))


def load_heatmap(path):
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise HeatmapFormatError(f"{path}: missing header")
    parts = data[:nl].split()
    if len(parts) != 3 or parts[0] != b"HMAP":
        raise HeatmapFormatError(f"{path}: bad magic or header")
    try:
        w, h = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise HeatmapFormatError(f"{path}: bad dimensions") from exc
    if w <= 0 or h <= 0:
        raise HeatmapFormatError(f"{path}: bad dimensions {w}x{h}")
    body = data[nl + 1 :]
    if len(body) != 4 * w * h:
        raise HeatmapFormatError(f"{path}: expected {4 * w * h} bytes, got {len(body)}")
    vals = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)
    if not np.all(np.isfinite(vals)) or vals.min() < 0 or vals.max() > 1:
        raise HeatmapFormatError(f"{path}: scores outside [0, 1]")
    return vals


def pose_to_dict(p: Pose):
    return {"translation": [float(v) for v in p.translation], "quaternion": [float(v) for v in p.rotation]}


def pose_from_dict(d):
    return Pose(d["translation"], d["quaternion"])


def save_ground_truth(path, model, poses, joint_values=None):
    doc = {"parts": {p.name: pose_to_dict(x) for p, x in zip(model.parts, poses)}}
    if joint_values is not None:
        doc["joints"] = {e.joint.name: float(q) for e, q in zip(model.edges, joint_values)}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_ground_truth(path, model):
    doc = json.loads(Path(path).read_text())
    return [pose_from_dict(doc["parts"][p.name]) for p in model.parts]


def save_scene(scene: Scene, directory):
    """Write heatmaps, 16-bit depth, ground truth and a manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in scene.model.parts]
    for name, h in zip(names, scene.observation.heatmaps):
        save_heatmap(h, d / f"heat_{name}.hmap")
    save_depth_pgm(d / "depth.pgm", scene.observation.depth)
    save_ground_truth(d / "gt.json", scene.model, scene.gt, scene.joint_values or None)
    manifest = {
        "scene_id": scene.scene_id,
        "urdf": scene.urdf,
        "regime": scene.regime,
        "seed": scene.seed,
        "camera": scene.observation.camera.to_dict(),
        "parts": names,
        "heatmaps": [f"heat_{n}.hmap" for n in names],
        "depth": "depth.pgm",
        "ground_truth": "gt.json",
        "corruption": scene.corruption.to_dict(),
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_scene(directory, model=None):
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"missing scene manifest {mpath}")
    man = json.loads(mpath.read_text())
    missing = [f for f in man["heatmaps"] + [man["depth"]] if not (d / f).exists()]
    if missing:
        raise FileNotFoundError(f"scene {man['scene_id']}: missing files {missing}")
    if model is None:
        model = load_urdf(man["urdf"])
    cam = PinholeCamera(**man["camera"])
    heat = np.stack([load_heatmap(d / f) for f in man["heatmaps"]])
    obs = Observation(heat, load_depth_pgm(d / man["depth"]), cam)
    gt_path = d / man["ground_truth"]
    gt = load_ground_truth(gt_path, model) if gt_path.exists() else []
    spec = CorruptionSpec(**man.get("corruption", {}))
    return Scene(man["scene_id"], model, obs, gt, man["regime"], man["seed"], man["urdf"], spec)
