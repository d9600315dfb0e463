"""Mesh builders and the bundled clamp-analog object.

The clamp analog mirrors a bar clamp: a rail, a jaw fixed to one end of it, a
sliding jaw on a prismatic joint, and a handle fixed to the sliding jaw. Each
part is an L-shaped union of boxes so that no part has a rotational symmetry.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .kinematics import load_urdf
from .se3 import TriangleMesh, save_obj


def box_mesh(size, center=(0.0, 0.0, 0.0), step=0.01):
    """Closed box with each face subdivided into a grid of about ``step`` meters."""
    size = np.asarray(size, dtype=float)
    center = np.asarray(center, dtype=float)
    half = size / 2
    verts, faces = [], []
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        nu = max(1, int(np.ceil(size[u_ax] / step)))
        nv = max(1, int(np.ceil(size[v_ax] / step)))
        for sign in (-1.0, 1.0):
            base = len(verts)
            for i in range(nu + 1):
                for j in range(nv + 1):
                    p = np.zeros(3)
                    p[axis] = sign * half[axis]
                    p[u_ax] = -half[u_ax] + size[u_ax] * i / nu
                    p[v_ax] = -half[v_ax] + size[v_ax] * j / nv
                    verts.append(p + center)
            # outward winding: (u, v, axis) is right-handed for axis order 0,1,2 cyclic
            flip = (sign < 0) != ((u_ax, v_ax) in ((0, 2),))
            for i in range(nu):
                for j in range(nv):
                    a = base + i * (nv + 1) + j
                    b = a + (nv + 1)
                    c, d = b + 1, a + 1
                    tris = [(a, b, c), (a, c, d)]
                    if flip:
                        tris = [(t[0], t[2], t[1]) for t in tris]
                    faces.extend(tris)
    return weld(TriangleMesh(np.array(verts), np.array(faces)))


def weld(mesh: TriangleMesh, decimals=9):
    """Merge coincident vertices."""
    key = np.round(mesh.vertices, decimals)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    return TriangleMesh(uniq, inv.reshape(-1)[mesh.faces])


def merge(*meshes):
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return weld(TriangleMesh(np.vstack(verts), np.vstack(faces)))


# part name -> list of (size, center) boxes, in the part frame
CLAMP_PARTS = {
    "fixed_jaw": [((0.02, 0.06, 0.015), (0.0, 0.0, 0.0)), ((0.012, 0.012, 0.015), (-0.016, 0.024, 0.0))],
    "rail": [((0.22, 0.02, 0.012), (0.0, 0.0, 0.0)), ((0.02, 0.02, 0.012), (-0.10, -0.02, 0.0))],
    "slider": [((0.02, 0.06, 0.015), (0.0, 0.0, 0.0)), ((0.012, 0.012, 0.015), (0.016, 0.024, 0.0))],
    "handle": [((0.03, 0.05, 0.02), (0.0, 0.0, 0.0)), ((0.012, 0.02, 0.012), (0.021, 0.015, 0.0))],
}

CLAMP_URDF = """<?xml version="1.0"?>
<robot name="clamp">
  <link name="fixed_jaw"><visual><geometry><mesh filename="meshes/fixed_jaw.obj"/></geometry></visual></link>
  <link name="rail"><visual><geometry><mesh filename="meshes/rail.obj"/></geometry></visual></link>
  <link name="slider"><visual><geometry><mesh filename="meshes/slider.obj"/></geometry></visual></link>
  <link name="handle"><visual><geometry><mesh filename="meshes/handle.obj"/></geometry></visual></link>
  <joint name="jaw_mount" type="fixed">
    <parent link="rail"/><child link="fixed_jaw"/>
    <origin xyz="0.10 0.04 0" rpy="0 0 0"/>
  </joint>
  <joint name="slide" type="prismatic">
    <parent link="rail"/><child link="slider"/>
    <origin xyz="-0.02 0.04 0" rpy="0 0 0"/>
    <axis xyz="1 0 0"/>
    <limit lower="-0.06" upper="0.08" effort="10" velocity="1"/>
  </joint>
  <joint name="handle_mount" type="fixed">
    <parent link="slider"/><child link="handle"/>
    <origin xyz="0 0.055 0" rpy="0 0 0"/>
  </joint>
</robot>
"""


def write_clamp(directory):
    """Write the clamp URDF and its OBJ meshes under ``directory``."""
    directory = Path(directory)
    (directory / "meshes").mkdir(parents=True, exist_ok=True)
    for name, boxes in CLAMP_PARTS.items():
        save_obj(merge(*[box_mesh(s, c) for s, c in boxes]), directory / "meshes" / f"{name}.obj")
    (directory / "clamp.urdf").write_text(CLAMP_URDF)
    return directory / "clamp.urdf"


def single_part_urdf(directory, part="rail"):
    """A one-link object reusing one clamp part mesh."""
    directory = Path(directory)
    (directory / "meshes").mkdir(parents=True, exist_ok=True)
    save_obj(merge(*[box_mesh(s, c) for s, c in CLAMP_PARTS[part]]), directory / "meshes" / f"{part}.obj")
    path = directory / f"{part}.urdf"
    path.write_text(
        f'<robot name="{part}"><link name="{part}"><visual><geometry>'
        f'<mesh filename="meshes/{part}.obj"/></geometry></visual></link></robot>\n'
    )
    return path


def clamp_urdf_path():
    return Path(str(resources.files("artpose") / "data" / "clamp" / "clamp.urdf"))


def load_clamp():
    return load_urdf(clamp_urdf_path())


if __name__ == "__main__":
    print(write_clamp(Path(__file__).parent / "data" / "clamp"))
