"""Rigid transforms, point clouds and triangle meshes.

Quaternions are stored as ``(w, x, y, z)`` and canonicalized to ``w >= 0`` so
that two poses describing the same rotation compare equal. All lengths are in
meters, all angles in radians.

The free functions operate on arrays with arbitrary leading dimensions and are
what the inference engine uses for particle batches; :class:`Pose` wraps a
single transform for the scalar API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PointCloud",
    "Pose",
    "TriangleMesh",
    "canonicalize",
    "compose",
    "load_obj",
    "matrix_to_quat",
    "pose_distance",
    "quat_angle",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_from_rotvec",
    "quat_from_rpy",
    "quat_mul",
    "quat_rotate",
    "quat_to_matrix",
    "quat_to_rotvec",
    "random_quaternions",
    "save_obj",
    "transform_cloud",
]


# ---------------------------------------------------------------------------
# quaternion helpers (vectorized)
# ---------------------------------------------------------------------------


def canonicalize(q):
    """Normalize and flip sign so that ``w >= 0``."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Rotation matrix (..., 3, 3) to canonical quaternion (..., 4)."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            out[k] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[k] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[k] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[k] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return canonicalize(out.reshape(m.shape[:-2] + (4,)))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * angle[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_from_rotvec(v):
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(theta/2)/theta, with its limit 1/2 at zero
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(theta > 1e-12, np.sin(half) / np.where(theta > 1e-12, theta, 1.0), 0.5 - theta**2 / 48.0)
    return np.concatenate([np.cos(half), k * v], axis=-1)


def quat_to_rotvec(q):
    q = canonicalize(q)
    w = np.clip(q[..., :1], -1.0, 1.0)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return k * v


def quat_from_rpy(roll, pitch, yaw):
    """Fixed-axis XYZ (URDF convention): R = Rz(yaw) Ry(pitch) Rx(roll)."""
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], roll)
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], pitch)
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], yaw)
    return canonicalize(quat_mul(qz, quat_mul(qy, qx)))


def quat_angle(a, b):
    """Geodesic angle in [0, pi] between the rotations of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # atan2 form stays accurate near 0 where arccos loses half the digits
    b = np.where(np.sum(a * b, axis=-1, keepdims=True) < 0.0, -b, b)
    return 4.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def quat_rotate(q, v):
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=float))


def random_quaternions(rng, n):
    """Uniform samples on SO(3) (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.random((3, n))
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    q = np.stack(
        [
            b * np.cos(2 * np.pi * u3),
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
        ],
        axis=-1,
    )
    return canonicalize(q)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


def _frozen(a, shape):
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform ``x -> R x + t``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("pose components must be finite")
        if np.linalg.norm(q) < 1e-12:
            raise ValueError("rotation quaternion must be non-zero")
        object.__setattr__(self, "translation", _frozen(t, 3))
        object.__setattr__(self, "rotation", _frozen(canonicalize(q), 4))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, x, y=None, z=None):
        if y is None:
            return cls(np.asarray(x, dtype=float))
        return cls(np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)):
        return cls(np.asarray(xyz, dtype=float), quat_from_rpy(*rpy))

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)):
        return cls(np.asarray(translation, dtype=float), quat_from_axis_angle(axis, angle))

    @property
    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        qi = quat_conj(self.rotation)
        return Pose(-quat_rotate(qi, self.translation), qi)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return compose(self, other)
        return NotImplemented

    def apply(self, points):
        """Apply to an (..., 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation_matrix.T + self.translation

    def allclose(self, other, atol=1e-9):
        dt, dr = pose_distance(self, other)
        return dt <= atol and dr <= atol

    def __repr__(self):
        t = np.array2string(self.translation, precision=4)
        q = np.array2string(self.rotation, precision=4)
        return f"Pose(t={t}, q={q})"


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(a.translation + quat_rotate(a.rotation, b.translation), quat_mul(a.rotation, b.rotation))


def pose_distance(a: Pose, b: Pose):
    """(translation gap in meters, geodesic rotation angle in radians)."""
    return float(np.linalg.norm(a.translation - b.translation)), float(quat_angle(a.rotation, b.rotation))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud coordinates must be finite")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def centroid(self):
        return self.points.mean(axis=0)


def transform_cloud(p: Pose, c: PointCloud) -> PointCloud:
    return PointCloud(p.apply(c.points))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3).copy()
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3).copy()
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def vertex_cloud(self, max_points=1024):
        """Mesh vertices, deterministically strided down to ``max_points``."""
        v = self.vertices
        if len(v) > max_points:
            idx = np.linspace(0, len(v) - 1, max_points).round().astype(int)
            v = v[idx]
        return PointCloud(v)

    def is_closed(self):
        """Every directed edge is matched by its reverse (a union of closed, consistently wound shells)."""
        if len(self.faces) == 0:
            return False
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        fwd = np.unique(directed, axis=0, return_counts=True)
        rev = np.unique(directed[:, ::-1], axis=0, return_counts=True)
        return all(np.array_equal(a, b) for a, b in zip(fwd, rev))

    def outward(self):
        """True when the winding gives a positive enclosed volume."""
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum()) > 0.0

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def load_obj(path) -> TriangleMesh:
    """Read ``v`` and triangular ``f`` records of a Wavefront OBJ file.

    Face entries of the form ``i/j/k`` keep the vertex index only; everything
    else in the file is ignored.
    """
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}:{lineno}: only triangular faces are supported")
            faces.append([i - 1 for i in idx])
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")
