"""Software z-buffer rasterizer for part masks and depth.

Poses are expressed in the camera frame (x right, y down, z forward). Pixel
``(row v, col u)`` is sampled at its center ``(u + 0.5, v + 0.5)``; edges
exactly through a center are resolved with a top-left rule so that a shared
edge is owned by exactly one triangle. Depth is interpolated perspective
correctly, and triangles are clipped against a near plane at 1 cm.

The batch scorer :func:`score_batch` renders many poses of one mesh and
reduces each render against a heatmap and a masked depth image without ever
materializing the full rasters; it is the hot loop of inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .se3 import Pose, TriangleMesh, quat_to_matrix

NEAR = 0.01


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        return (self.height, self.width)

    def project(self, points):
        p = np.asarray(points, dtype=float)
        return np.stack([self.fx * p[..., 0] / p[..., 2] + self.cx, self.fy * p[..., 1] / p[..., 2] + self.cy], -1)

    def backproject(self, u, v, z):
        """Camera-frame points for continuous pixel coordinates ``(u, v)`` at depth ``z``."""
        u, v, z = (np.asarray(a, dtype=float) for a in (u, v, z))
        return np.stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z], -1)

    def pixel_centers(self, rows, cols, z):
        return self.backproject(np.asarray(cols) + 0.5, np.asarray(rows) + 0.5, z)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _owns_edge(dx, dy):
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


@numba.njit(cache=True)
def _raster_tri(x0, y0, z0, x1, y1, z1, x2, y2, z2, fx, fy, cx, cy, zbuf, bbox, cull):
    """Rasterize one camera-frame triangle (all z >= NEAR) into ``zbuf``."""
    h, w = zbuf.shape
    u0 = fx * x0 / z0 + cx
    v0 = fy * y0 / z0 + cy
    u1 = fx * x1 / z1 + cx
    v1 = fy * y1 / z1 + cy
    u2 = fx * x2 / z2 + cx
    v2 = fy * y2 / z2 + cy
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    if area == 0.0 or not math.isfinite(area):
        return
    if cull and area > 0.0:
        return
    iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
    if area < 0.0:
        u1, v1, iz1, u2, v2, iz2 = u2, v2, iz2, u1, v1, iz1
        area = -area
    umin = min(u0, u1, u2)
    umax = max(u0, u1, u2)
    vmin = min(v0, v1, v2)
    vmax = max(v0, v1, v2)
    i0 = max(int(math.ceil(umin - 0.5)), 0)
    i1 = min(int(math.floor(umax - 0.5)), w - 1)
    j0 = max(int(math.ceil(vmin - 0.5)), 0)
    j1 = min(int(math.floor(vmax - 0.5)), h - 1)
    if i0 > i1 or j0 > j1:
        return
    # edge e_k is opposite vertex k
    ax, ay = u2 - u1, v2 - v1
    bx, by = u0 - u2, v0 - v2
    ex, ey = u1 - u0, v1 - v0
    own0 = _owns_edge(ax, ay)
    own1 = _owns_edge(bx, by)
    own2 = _owns_edge(ex, ey)
    inv_area = 1.0 / area
    for j in range(j0, j1 + 1):
        py = j + 0.5
        for i in range(i0, i1 + 1):
            px = i + 0.5
            w0 = ax * (py - v1) - ay * (px - u1)
            w1 = bx * (py - v2) - by * (px - u2)
            w2 = ex * (py - v0) - ey * (px - u0)
            if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                continue
            if (w0 == 0.0 and not own0) or (w1 == 0.0 and not own1) or (w2 == 0.0 and not own2):
                continue
            iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) * inv_area
            if iz <= 0.0:
                continue
            z = 1.0 / iz
            cur = zbuf[j, i]
            if cur == 0.0 or z < cur:
                zbuf[j, i] = z
            bbox[0] = min(bbox[0], i)
            bbox[1] = max(bbox[1], i)
            bbox[2] = min(bbox[2], j)
            bbox[3] = max(bbox[3], j)


@numba.njit(cache=True, nogil=True)
def _raster_mesh(vc, faces, fx, fy, cx, cy, near, zbuf, bbox, cull):
    """Rasterize a camera-frame mesh, clipping each face against ``z = near``."""
    px = np.empty(4)
    py = np.empty(4)
    pz = np.empty(4)
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        za, zb, zc = vc[a, 2], vc[b, 2], vc[c, 2]
        if za < near and zb < near and zc < near:
            continue
        if za >= near and zb >= near and zc >= near:
            _raster_tri(vc[a, 0], vc[a, 1], za, vc[b, 0], vc[b, 1], zb, vc[c, 0], vc[c, 1], zc,
                        fx, fy, cx, cy, zbuf, bbox, cull)
            continue
        # Sutherland-Hodgman against the near plane: at most 4 vertices
        n = 0
        idx = (a, b, c)
        for k in range(3):
            p = idx[k]
            q = idx[(k + 1) % 3]
            zp, zq = vc[p, 2], vc[q, 2]
            if zp >= near:
                px[n], py[n], pz[n] = vc[p, 0], vc[p, 1], zp
                n += 1
            if (zp >= near) != (zq >= near):
                t = (near - zp) / (zq - zp)
                px[n] = vc[p, 0] + t * (vc[q, 0] - vc[p, 0])
                py[n] = vc[p, 1] + t * (vc[q, 1] - vc[p, 1])
                pz[n] = near
                n += 1
        for k in range(1, n - 1):
            _raster_tri(px[0], py[0], pz[0], px[k], py[k], pz[k], px[k + 1], py[k + 1], pz[k + 1],
                        fx, fy, cx, cy, zbuf, bbox, cull)


@numba.njit(cache=True)
def _to_camera(verts, rot, t):
    n = verts.shape[0]
    out = np.empty((n, 3))
    for k in range(n):
        x, y, z = verts[k, 0], verts[k, 1], verts[k, 2]
        for r in range(3):
            out[k, r] = rot[r, 0] * x + rot[r, 1] * y + rot[r, 2] * z + t[r]
    return out


@numba.njit(cache=True, nogil=True)
def _score_batch(verts, faces, rots, ts, fx, fy, cx, cy, near, heat, mdepth, zbuf, cull):
    n = ts.shape[0]
    inter = np.zeros(n)
    mask = np.zeros(n)
    derr = np.zeros(n)
    overlap = np.zeros(n)
    bbox = np.empty(4, dtype=np.int64)
    for p in range(n):
        vc = _to_camera(verts, rots[p], ts[p])
        bbox[0] = zbuf.shape[1]
        bbox[1] = -1
        bbox[2] = zbuf.shape[0]
        bbox[3] = -1
        _raster_mesh(vc, faces, fx, fy, cx, cy, near, zbuf, bbox, cull)
        s_int = 0.0
        s_mask = 0.0
        s_err = 0.0
        s_ov = 0.0
        for j in range(bbox[2], bbox[3] + 1):
            for i in range(bbox[0], bbox[1] + 1):
                z = zbuf[j, i]
                if z > 0.0:
                    s_mask += 1.0
                    s_int += heat[j, i]
                    d = mdepth[j, i]
                    if d > 0.0:
                        s_ov += 1.0
                        s_err += abs(z - d)
                    zbuf[j, i] = 0.0
        inter[p] = s_int
        mask[p] = s_mask
        derr[p] = s_err
        overlap[p] = s_ov
    return inter, mask, derr, overlap


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def render_depth(mesh: TriangleMesh, pose: Pose, cam: PinholeCamera, cull=False):
    """Depth raster (meters, 0 = no hit) of ``mesh`` placed at ``pose``.

    ``cull`` skips back-facing triangles; only valid for closed meshes with
    outward winding.
    """
    zbuf = np.zeros(cam.shape)
    if len(mesh.faces) == 0:
        return zbuf
    vc = pose.apply(mesh.vertices)
    bbox = np.array([cam.width, -1, cam.height, -1], dtype=np.int64)
    _raster_mesh(np.ascontiguousarray(vc), mesh.faces, cam.fx, cam.fy, cam.cx, cam.cy, NEAR, zbuf, bbox, cull)
    return zbuf


def render(mesh: TriangleMesh, pose: Pose, cam: PinholeCamera, cull=False):
    """``(mask, depth)`` of one mesh at one pose; mask is a boolean raster."""
    depth = render_depth(mesh, pose, cam, cull)
    return depth > 0.0, depth


class BatchScorer:
    """Per-part scratch z-buffer plus the batched mask/depth reductions.

    :meth:`__call__` returns, for each pose, ``(Σ_{p∈M} Z(p), |M|, Σ|Δdepth|,
    n_overlap)`` where ``M`` is the rendered mask.
    """

    def __init__(self, mesh: TriangleMesh, cam: PinholeCamera, cull=False):
        self.cull = cull
        self.verts = np.ascontiguousarray(mesh.vertices)
        self.faces = np.ascontiguousarray(mesh.faces)
        self.cam = cam
        self._zbuf = np.zeros(cam.shape)

    def __call__(self, translations, quaternions, heat, mdepth):
        rots = np.ascontiguousarray(quat_to_matrix(quaternions))
        ts = np.ascontiguousarray(translations, dtype=float)
        c = self.cam
        return _score_batch(
            self.verts, self.faces, rots, ts, c.fx, c.fy, c.cx, c.cy, NEAR,
            np.ascontiguousarray(heat, dtype=float), np.ascontiguousarray(mdepth, dtype=float), self._zbuf, self.cull,
        )


def score_batch(mesh, translations, quaternions, heat, mdepth, cam, cull=False):
    return BatchScorer(mesh, cam, cull)(translations, quaternions, heat, mdepth)


# ---------------------------------------------------------------------------
# PGM debug / depth I/O
# ---------------------------------------------------------------------------


def write_pgm(path, raster, maxval):
    a = np.asarray(raster)
    h, w = a.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    dtype = ">u1" if maxval < 256 else ">u2"
    Path(path).write_bytes(header + np.ascontiguousarray(a, dtype=dtype).tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos != n:
        raise ValueError(f"{path}: expected {n} bytes of pixel data, got {len(data) - pos}")
    return np.frombuffer(data[pos:], dtype=dtype).reshape(h, w)


def save_mask_pgm(path, mask):
    write_pgm(path, np.where(np.asarray(mask) > 0, 255, 0), 255)


def save_depth_pgm(path, depth):
    mm = np.round(np.asarray(depth) * 1000.0)
    write_pgm(path, np.clip(mm, 0, 65535), 65535)


def load_depth_pgm(path):
    return read_pgm(path).astype(float) / 1000.0
