"""Articulated part graphs: URDF-subset parsing and one-DoF joint geometry.

A joint maps a parent pose to a child pose as ``parent ∘ origin ∘ motion(q)``
where ``motion`` rotates about (revolute) or translates along (prismatic) the
joint axis. :func:`joint_residual` inverts that map in closed form.
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .se3 import (
    PointCloud,
    Pose,
    TriangleMesh,
    load_obj,
    quat_angle,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_to_matrix,
)

log = logging.getLogger(__name__)

#: meters of translation equivalent to one radian of orientation error
ROT_WEIGHT = 0.1

JOINT_KINDS = ("fixed", "revolute", "prismatic")
_KIND_CODE = {"fixed": 0, "revolute": 1, "prismatic": 2}


class URDFError(ValueError):
    pass


class URDFParseError(URDFError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class UnsupportedJointError(URDFError):
    pass


class StructureError(URDFError):
    pass


@dataclass(frozen=True, eq=False)
class Joint:
    kind: str
    origin: Pose = field(default_factory=Pose)
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    limits: tuple | None = None
    name: str = ""
    # True for the child->parent view of an edge (see ``inverted``)
    inverted: bool = False

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise UnsupportedJointError(f"unsupported joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if self.kind == "fixed":
            if self.limits is not None:
                raise ValueError("fixed joints carry no limits")
        else:
            n = np.linalg.norm(axis)
            if n < 1e-12:
                raise ValueError("joint axis must be non-zero")
            axis = axis / n
            if self.limits is not None:
                lo, hi = (float(v) for v in self.limits)
                if lo > hi:
                    raise ValueError(f"joint limits out of order: {lo} > {hi}")
                object.__setattr__(self, "limits", (lo, hi))
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)

    @property
    def code(self):
        return _KIND_CODE[self.kind]

    @property
    def lower(self):
        return -math.inf if self.limits is None else self.limits[0]

    @property
    def upper(self):
        return math.inf if self.limits is None else self.limits[1]

    def inverted_view(self):
        """The same edge seen from the child: maps the child pose to the parent.

        The joint value keeps its meaning, so limits are unchanged.
        """
        return Joint(self.kind, self.origin, self.axis, self.limits, self.name, not self.inverted)

    def forward_view(self):
        if not self.inverted:
            return self
        return Joint(self.kind, self.origin, self.axis, self.limits, self.name, False)

    def sample(self, rng, size=None):
        """Joint values uniform in limits (0 for fixed joints)."""
        if self.kind == "fixed":
            return np.zeros(size) if size is not None else 0.0
        lo, hi = self.limits if self.limits is not None else (-math.pi, math.pi)
        return rng.uniform(lo, hi, size)


def motion(joint: Joint, q) -> Pose:
    if joint.kind == "revolute":
        return Pose.from_axis_angle(joint.axis, q)
    if joint.kind == "prismatic":
        return Pose(joint.axis * float(q))
    return Pose()


def child_pose(parent: Pose, joint: Joint, q=0.0) -> Pose:
    if joint.inverted:
        return parent @ motion(joint, -float(q)) @ joint.origin.inverse()
    return parent @ joint.origin @ motion(joint, q)


def _wrap_near_limits(theta, lo, hi):
    """Pick theta + 2πk closest to the interval [lo, hi]."""
    best, best_d = theta, math.inf
    for k in (-1, 0, 1):
        c = theta + 2 * math.pi * k
        d = max(lo - c, 0.0, c - hi)
        if d < best_d - 1e-15:
            best, best_d = c, d
    return best


def joint_residual(parent: Pose, joint: Joint, child: Pose):
    """Best-fit joint value and off-manifold error ``trans + ROT_WEIGHT * rot``."""
    if joint.inverted:
        return joint_residual(child, joint.forward_view(), parent)
    rel = (parent @ joint.origin).inverse() @ child
    t, qr = rel.translation, rel.rotation
    if joint.kind == "fixed":
        return 0.0, float(np.linalg.norm(t) + ROT_WEIGHT * quat_angle(qr, [1.0, 0, 0, 0]))
    a = joint.axis
    if joint.kind == "prismatic":
        q_hat = float(a @ t)
        off = np.linalg.norm(t - q_hat * a) + ROT_WEIGHT * quat_angle(qr, [1.0, 0, 0, 0])
        return q_hat, float(off)
    # revolute: twist about the axis, the swing is the residual
    w, v = qr[0], qr[1:]
    proj = float(a @ v)
    theta = 2.0 * math.atan2(proj, w)
    theta = _wrap_near_limits(theta, joint.lower, joint.upper)
    twist = quat_from_axis_angle(a, theta)
    swing = quat_angle(qr, twist)
    return theta, float(np.linalg.norm(t) + ROT_WEIGHT * swing)


def limit_violation(joint: Joint, q_hat: float) -> float:
    if joint.kind == "fixed" or joint.limits is None:
        return 0.0
    return max(joint.lower - q_hat, 0.0, q_hat - joint.upper)


# ---------------------------------------------------------------------------
# batched residuals for the inference inner loop
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@numba.njit(cache=True)
def _rot(w, x, y, z, vx, vy, vz):
    # v' = q v q*, expanded
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


@numba.njit(cache=True)
def _angle_from_w(w):
    w = abs(w)
    w = min(w, 1.0)
    return 2.0 * math.acos(w)


@numba.njit(cache=True, nogil=True)
def _violation_matrix(pt, pq, ct, cq, ot, oq, axis, kind, lo, hi, rot_weight):
    n_p = pt.shape[0]
    n_c = ct.shape[0]
    out = np.empty((n_p, n_c))
    ax, ay, az = axis[0], axis[1], axis[2]
    for i in range(n_p):
        # A = P ∘ O, then its inverse
        ow, ox, oy, oz = oq[0], oq[1], oq[2], oq[3]
        pw, px, py, pz = pq[i, 0], pq[i, 1], pq[i, 2], pq[i, 3]
        aw, aqx, aqy, aqz = _qmul(pw, px, py, pz, ow, ox, oy, oz)
        rx, ry, rz = _rot(pw, px, py, pz, ot[0], ot[1], ot[2])
        atx, aty, atz = pt[i, 0] + rx, pt[i, 1] + ry, pt[i, 2] + rz
        for j in range(n_c):
            dx, dy, dz = ct[j, 0] - atx, ct[j, 1] - aty, ct[j, 2] - atz
            tx, ty, tz = _rot(aw, -aqx, -aqy, -aqz, dx, dy, dz)
            qw, qx, qy, qz = _qmul(aw, -aqx, -aqy, -aqz, cq[j, 0], cq[j, 1], cq[j, 2], cq[j, 3])
            if kind == 0:
                v = math.sqrt(tx * tx + ty * ty + tz * tz) + rot_weight * _angle_from_w(qw)
            elif kind == 2:
                qh = ax * tx + ay * ty + az * tz
                ex, ey, ez = tx - qh * ax, ty - qh * ay, tz - qh * az
                v = math.sqrt(ex * ex + ey * ey + ez * ez) + rot_weight * _angle_from_w(qw)
                if qh < lo:
                    v += lo - qh
                elif qh > hi:
                    v += qh - hi
            else:
                proj = ax * qx + ay * qy + az * qz
                if qw < 0.0:
                    proj = -proj
                    aw_ = -qw
                else:
                    aw_ = qw
                theta = 2.0 * math.atan2(proj, aw_)
                # only the distance of the 2π representative closest to the limits matters
                best_d = max(lo - theta, 0.0, theta - hi)
                for k in (-1.0, 1.0):
                    c = theta + 2.0 * math.pi * k
                    d = max(lo - c, 0.0, c - hi)
                    if d < best_d - 1e-15:
                        best_d = d
                twist_dot = math.sqrt(aw_ * aw_ + proj * proj)
                v = math.sqrt(tx * tx + ty * ty + tz * tz) + rot_weight * _angle_from_w(twist_dot) + best_d
            out[i, j] = v
    return out


def violation_matrix(parent_t, parent_q, child_t, child_q, joint: Joint):
    """Pairwise violation for every (parent particle, child particle) pair.

    ``violation = off_axis_err + distance of q_hat outside the limits``, the
    quantity the pairwise potential exponentiates. Rows index parents,
    columns index children; ``joint`` must be in its forward view.
    """
    j = joint.forward_view()
    lo = -math.inf if j.limits is None else j.limits[0]
    hi = math.inf if j.limits is None else j.limits[1]
    return _violation_matrix(
        np.ascontiguousarray(parent_t, dtype=float),
        np.ascontiguousarray(parent_q, dtype=float),
        np.ascontiguousarray(child_t, dtype=float),
        np.ascontiguousarray(child_q, dtype=float),
        np.ascontiguousarray(j.origin.translation),
        np.ascontiguousarray(j.origin.rotation),
        np.ascontiguousarray(j.axis),
        j.code,
        lo,
        hi,
        ROT_WEIGHT,
    )


def batch_child_pose(parent_t, parent_q, joint: Joint, q):
    """Vectorized :func:`child_pose` over particle arrays."""
    parent_t = np.asarray(parent_t, dtype=float)
    parent_q = np.asarray(parent_q, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), parent_t.shape[:1])
    n = len(parent_t)
    if joint.kind == "revolute":
        m_q = quat_from_axis_angle(np.broadcast_to(joint.axis, (n, 3)), q)
        m_t = np.zeros((n, 3))
    elif joint.kind == "prismatic":
        m_q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        m_t = q[:, None] * joint.axis
    else:
        m_q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        m_t = np.zeros((n, 3))
    if joint.inverted:
        # parent ∘ motion(-q) ∘ origin^-1
        inv_o = joint.origin.inverse()
        m_q = quat_conj(m_q)
        m_t = -m_t if joint.kind == "prismatic" else m_t
        steps = [(m_t, m_q), (np.broadcast_to(inv_o.translation, (n, 3)), np.broadcast_to(inv_o.rotation, (n, 4)))]
    else:
        o = joint.origin
        steps = [(np.broadcast_to(o.translation, (n, 3)), np.broadcast_to(o.rotation, (n, 4))), (m_t, m_q)]
    t, r = parent_t, parent_q
    for st, sq in steps:
        t = t + np.einsum("nij,nj->ni", quat_to_matrix(r), st)
        r = quat_mul(r, sq)
    r = r / np.linalg.norm(r, axis=-1, keepdims=True)
    r = np.where(r[:, :1] < 0, -r, r)
    return t, r


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Part:
    name: str
    mesh: TriangleMesh
    cloud: PointCloud
    symmetric: bool = False


@dataclass(frozen=True, eq=False)
class Edge:
    parent: int
    child: int
    joint: Joint


@dataclass(frozen=True, eq=False)
class ArticulatedModel:
    parts: tuple
    edges: tuple
    name: str = "object"

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(self, "edges", tuple(self.edges))
        names = [p.name for p in self.parts]
        if len(set(names)) != len(names):
            raise StructureError("part names must be unique")
        _check_tree(len(self.parts), [(e.parent, e.child) for e in self.edges])

    def __len__(self):
        return len(self.parts)

    def index(self, name):
        for i, p in enumerate(self.parts):
            if p.name == name:
                return i
        raise KeyError(name)

    def neighbors(self, s):
        """``[(t, joint)]`` where ``child_pose(X_t, joint, q)`` predicts ``X_s``."""
        out = []
        for e in self.edges:
            if e.child == s:
                out.append((e.parent, e.joint))
            elif e.parent == s:
                out.append((e.child, e.joint.inverted_view()))
        return out

    def root(self):
        children = {e.child for e in self.edges}
        return next(i for i in range(len(self.parts)) if i not in children)

    def forward_kinematics(self, root_pose: Pose, joint_values=None):
        """Part poses from a root pose and one value per edge (default 0)."""
        if joint_values is None:
            joint_values = [0.0] * len(self.edges)
        poses = [None] * len(self.parts)
        root = self.root()
        poses[root] = root_pose
        queue = deque([root])
        while queue:
            s = queue.popleft()
            for k, e in enumerate(self.edges):
                if e.parent == s and poses[e.child] is None:
                    poses[e.child] = child_pose(poses[s], e.joint, joint_values[k])
                    queue.append(e.child)
        return poses

    def joint_values(self, poses):
        return [joint_residual(poses[e.parent], e.joint, poses[e.child])[0] for e in self.edges]


def _check_tree(n, pairs):
    if n == 0:
        raise StructureError("model has no parts")
    if len(pairs) != n - 1:
        raise StructureError(f"{n} parts need {n - 1} joints to form a tree, got {len(pairs)}")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra == rb:
            raise StructureError("cycle in link graph")
        parent[ra] = rb


# ---------------------------------------------------------------------------
# URDF
# ---------------------------------------------------------------------------


def _floats(text, n, default):
    if text is None:
        return np.array(default, dtype=float)
    vals = [float(v) for v in text.split()]
    if len(vals) != n:
        raise URDFParseError(f"expected {n} numbers, got {text!r}")
    return np.array(vals, dtype=float)


def parse_urdf(text, base_dir=".", *, symmetric_parts=()) -> ArticulatedModel:
    """Build an :class:`ArticulatedModel` from a URDF document.

    Mesh filenames are resolved relative to ``base_dir``. Only OBJ meshes are
    read; unknown elements are logged and ignored.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise URDFParseError(str(exc), line=exc.position[0]) from exc
    if root.tag != "robot":
        raise URDFParseError(f"root element must be <robot>, got <{root.tag}>", line=1)
    base_dir = Path(base_dir)
    ignored = set()

    links = {}
    for el in root:
        if el.tag == "link":
            name = el.get("name")
            if not name:
                raise URDFParseError("link without a name")
            if name in links:
                raise StructureError(f"duplicate link {name!r}")
            mesh_el = el.find("visual/geometry/mesh")
            links[name] = mesh_el
            for sub in el:
                if sub.tag != "visual":
                    ignored.add(sub.tag)
        elif el.tag != "joint":
            ignored.add(el.tag)

    joints = []
    for el in root.iter("joint"):
        name = el.get("name", "")
        kind = el.get("type")
        if kind not in JOINT_KINDS:
            raise UnsupportedJointError(f"joint {name!r}: unsupported type {kind!r}")
        p = el.find("parent")
        c = el.find("child")
        if p is None or c is None:
            raise URDFParseError(f"joint {name!r} needs <parent> and <child>")
        origin_el = el.find("origin")
        xyz = _floats(None if origin_el is None else origin_el.get("xyz"), 3, [0, 0, 0])
        rpy = _floats(None if origin_el is None else origin_el.get("rpy"), 3, [0, 0, 0])
        axis_el = el.find("axis")
        axis = _floats(None if axis_el is None else axis_el.get("xyz"), 3, [1, 0, 0])
        limits = None
        if kind != "fixed":
            lim = el.find("limit")
            if lim is not None and lim.get("lower") is not None and lim.get("upper") is not None:
                limits = (float(lim.get("lower")), float(lim.get("upper")))
        for sub in el:
            if sub.tag not in ("parent", "child", "origin", "axis", "limit"):
                ignored.add(sub.tag)
        joints.append((p.get("link"), c.get("link"), Joint(kind, Pose.from_xyz_rpy(xyz, rpy), axis, limits, name)))

    for tag in sorted(ignored):
        log.warning("URDF element <%s> ignored", tag)

    used = {n for j in joints for n in j[:2]}
    for n in used:
        if n not in links:
            raise StructureError(f"joint references unknown link {n!r}")
    names = []
    for n, mesh_el in links.items():
        if mesh_el is None:
            if n in used:
                raise StructureError(f"link {n!r} is jointed but has no mesh")
            log.warning("link %r has no mesh and is skipped", n)
            continue
        names.append(n)

    children = [c for _, c, _ in joints]
    if len(set(children)) != len(children):
        raise StructureError("a link has more than one parent joint (cycle in link graph)")

    parts = []
    for n in names:
        mesh_el = links[n]
        fn = mesh_el.get("filename")
        if not fn:
            raise URDFParseError(f"link {n!r}: mesh without filename")
        path = base_dir / fn
        mesh = load_obj(path)
        scale = mesh_el.get("scale")
        if scale is not None:
            mesh = TriangleMesh(mesh.vertices * _floats(scale, 3, [1, 1, 1]), mesh.faces)
        parts.append(Part(n, mesh, mesh.vertex_cloud(), n in symmetric_parts))

    index = {n: i for i, n in enumerate(names)}
    edges = [Edge(index[p], index[c], j) for p, c, j in joints]
    return ArticulatedModel(parts, edges, root.get("name", "object"))


def load_urdf(path, **kwargs) -> ArticulatedModel:
    path = Path(path)
    return parse_urdf(path.read_text(), path.parent, **kwargs)
