"""Procedural watertight meshes and the builtin object set.

All builtin objects are prisms (a simple polygon extruded), which keeps
them closed and manifold without mesh booleans.  Units are meters.
"""

from importlib import resources
from pathlib import Path

import numpy as np

DATA_PACKAGE = "tacgraph.data"


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _inside_tri(p, a, b, c):
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    return cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0


def ear_clip(poly):
    """Triangulate a simple polygon; returns CCW index triples."""
    poly = np.asarray(poly, dtype=float)
    idx = list(range(len(poly)))
    if _signed_area(poly) < 0:
        idx.reverse()
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2:
            raise ValueError("ear clipping failed; polygon not simple?")
        n = len(idx)
        for k in range(n):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % n]
            a, b, c = poly[i0], poly[i1], poly[i2]
            turn = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if turn <= 1e-15:
                continue
            if any(_inside_tri(poly[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            break
    tris.append(tuple(idx))
    return np.array(tris, dtype=np.int64)


def extrude(poly, thickness):
    """Prism over a simple polygon in the xy-plane, spanning z in +-thickness/2."""
    poly = np.asarray(poly, dtype=float)
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    n = len(poly)
    h = 0.5 * thickness
    V = np.vstack([np.c_[poly, np.full(n, -h)], np.c_[poly, np.full(n, h)]])
    cap = ear_clip(poly)
    faces = [cap[:, ::-1], cap + n]
    for i in range(n):
        j = (i + 1) % n
        faces.append(np.array([[i, j, j + n], [i, j + n, i + n]]))
    return V, np.vstack(faces)


def box(sx, sy, sz, center=(0.0, 0.0, 0.0)):
    V, F = extrude([[-sx / 2, -sy / 2], [sx / 2, -sy / 2], [sx / 2, sy / 2], [-sx / 2, sy / 2]], sz)
    return V + np.asarray(center), F


def prism_cylinder(radius, length, sides=32):
    """Cylinder along z; facets (not vertices) face +-x and +-y."""
    ang = 2 * np.pi * (np.arange(sides) + 0.5) / sides
    return extrude(np.c_[radius * np.cos(ang), radius * np.sin(ang)], length)


def lshape(profile_mm=((0, 0), (80, 0), (80, 40), (30, 40), (30, 70), (0, 70)), thickness_mm=25.0):
    """L profile in the object xz-plane, extruded along y, centred on its surface centroid."""
    V, F = extrude(np.asarray(profile_mm, dtype=float) * 1e-3, thickness_mm * 1e-3)
    # (u, v, w) -> (u, -w, v): proper rotation taking the profile plane to xz
    V = np.c_[V[:, 0], -V[:, 2], V[:, 1]]
    return V, F


def wrench_like(thickness_mm=8.0):
    """Open-end wrench silhouette: handle plus a slotted head (non-convex)."""
    outline = np.array(
        [
            (0, -6), (100, -6), (105, -15), (125, -15), (135, -5), (118, -5),
            (118, 5), (135, 5), (125, 15), (105, 15), (100, 6), (0, 6),
        ],
        dtype=float,
    )
    return extrude(outline * 1e-3, thickness_mm * 1e-3)


def _centred(vf):
    from .mesh import TriangleMesh

    V, F = vf
    m = TriangleMesh(V, F)
    return V - m.centroid, F


def builtin_geometry():
    return {
        "cube": _centred(box(0.05, 0.05, 0.05)),
        "cylinder": _centred(prism_cylinder(0.02, 0.08)),
        "lshape": _centred(lshape()),
        "wrench": _centred(wrench_like()),
        "table": box(0.6, 0.6, 0.05, center=(0.0, 0.0, -0.025)),
        "tetra": (
            np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float),
            np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]),
        ),
    }


# Object-frame axes that may sit along the gripper closing axis, per object.
# A second entry means the grasp cannot tell the two sides apart.
GRASP_AXES = {
    "cube": [[0.0, 1.0, 0.0]],
    "cylinder": [[0.0, 1.0, 0.0]],
    "lshape": [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]],
    "wrench": [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
}


def builtin_path(name):
    path = Path(str(resources.files(DATA_PACKAGE).joinpath(f"{name}.obj")))
    if not path.exists():
        raise FileNotFoundError(f"no builtin mesh named {name!r}")
    return path


def write_builtins(directory=None):
    from .mesh import write_obj

    directory = Path(directory) if directory else Path(__file__).resolve().parent.parent / "data"
    directory.mkdir(parents=True, exist_ok=True)
    for name, vf in builtin_geometry().items():
        write_obj(vf, directory / f"{name}.obj")
    return directory
