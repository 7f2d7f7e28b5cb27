"""Watertight triangle meshes with exact signed-distance queries."""

import logging
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-14
LEAF_SIZE = 4


class MeshError(ValueError):
    pass


class ParseError(MeshError):
    pass


class NonWatertight(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


@dataclass(frozen=True)
class SdfResult:
    value: float
    gradient: np.ndarray
    closest_point: np.ndarray


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "world"

    FRAMES = ("world", "gripper", "object")

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.frame not in self.FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if pts.shape[0] < 1:
            raise ValueError("point cloud is empty")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def require(self, frame):
        if self.frame != frame:
            raise ValueError(f"expected a {frame}-frame cloud, got {self.frame}")
        return self.points


@dataclass(frozen=True)
class LoadReport:
    degenerate_removed: int = 0
    flipped: bool = False


@dataclass(frozen=True)
class Bvh:
    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray


def _build_bvh(tris):
    """Median-split AABB tree, flattened to arrays.  Node 0 is the root."""
    centroids = tris.mean(axis=1)
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    order = np.arange(tris.shape[0])
    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        bmin.append(lo[idx].min(axis=0))
        bmax.append(hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(bmin) - 1

    root = new_node(0, len(order))
    todo = [(root, 0, len(order))]
    while todo:
        node, s, e = todo.pop()
        if e - s <= LEAF_SIZE:
            continue
        c = centroids[order[s:e]]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - s) // 2
        part = np.argsort(c[:, axis], kind="stable")
        order[s:e] = order[s:e][part]
        m = s + mid
        l = new_node(s, m)
        r = new_node(m, e)
        left[node], right[node] = l, r
        count[node] = 0
        todo.append((l, s, m))
        todo.append((r, m, e))

    return Bvh(
        bmin=np.array(bmin),
        bmax=np.array(bmax),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order.astype(np.int64),
    )


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Closed, consistently oriented triangle surface.

    Construction validates watertightness, drops zero-area faces and
    precomputes the pseudo-normal table used for signing distances.
    Immutable afterwards, so concurrent queries are safe.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""
    report: LoadReport = field(default_factory=LoadReport)

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        F = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if F.size == 0:
            raise MeshError("mesh has no faces")
        if F.min() < 0 or F.max() >= len(V):
            raise ParseError("face index out of range")
        if not np.all(np.isfinite(V)):
            raise ParseError("non-finite vertex coordinate")

        tris = V[F]
        cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        area = 0.5 * np.linalg.norm(cross, axis=1)
        keep = area >= DEGENERATE_AREA
        removed = int((~keep).sum())
        if removed:
            log.warning("%s: removed %d degenerate faces", self.name or "mesh", removed)
            F, tris, cross, area = F[keep], tris[keep], cross[keep], area[keep]
            if len(F) == 0:
                raise DegenerateFace("every face is degenerate")

        try:
            neighbours = _edge_neighbours(F)
        except NonWatertight as exc:
            if removed:
                raise DegenerateFace(f"removing {removed} degenerate face(s) opened the surface: {exc}") from exc
            raise

        volume = np.sum(np.einsum("ij,ij->i", tris[:, 0], cross)) / 6.0
        flipped = volume < 0
        if flipped:
            F = F[:, ::-1].copy()
            tris = V[F]
            cross = -cross
            neighbours = _edge_neighbours(F)

        fn = cross / (2.0 * area[:, None])
        # interior angles at each corner
        ang = np.empty((len(F), 3))
        for k in range(3):
            u = _unit(tris[:, (k + 1) % 3] - tris[:, k])
            w = _unit(tris[:, (k + 2) % 3] - tris[:, k])
            ang[:, k] = np.arccos(np.clip(np.einsum("ij,ij->i", u, w), -1.0, 1.0))
        vn = np.zeros_like(V)
        for k in range(3):
            np.add.at(vn, F[:, k], ang[:, k, None] * fn)
        vn = _unit(vn)

        # region order: vertex a, b, c, edge ab, bc, ca, face
        table = np.empty((len(F), 7, 3))
        table[:, 0:3] = vn[F]
        for k in range(3):
            table[:, 3 + k] = _unit(fn + fn[neighbours[:, k]])
        table[:, 6] = fn

        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "faces", F)
        object.__setattr__(self, "report", LoadReport(removed, bool(flipped)))
        object.__setattr__(self, "tris", np.ascontiguousarray(tris))
        object.__setattr__(self, "face_normals", fn)
        object.__setattr__(self, "face_areas", area)
        object.__setattr__(self, "vertex_normals", vn)
        object.__setattr__(self, "region_normals", np.ascontiguousarray(table))
        object.__setattr__(self, "bvh", _build_bvh(tris))
        for name in ("vertices", "faces", "tris", "face_normals", "face_areas", "vertex_normals", "region_normals"):
            getattr(self, name).flags.writeable = False

    @property
    def area(self):
        return float(self.face_areas.sum())

    @cached_property
    def centroid(self):
        """Area-weighted surface centroid."""
        c = self.tris.mean(axis=1)
        return (c * self.face_areas[:, None]).sum(axis=0) / self.face_areas.sum()

    @cached_property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def query(self, points, use_numba=None):
        """Raw arrays ``(value, gradient, closest, face, region)`` for an (N, 3) array."""
        return kernels.query(self, points, use_numba=use_numba)

    def sdf(self, points):
        """Signed distances and gradients for an (N, 3) array."""
        v, g, _, _, _ = kernels.query(self, points)
        return v, g


def _edge_neighbours(F):
    """For each face and local edge k=(k, k+1), the face across that edge."""
    directed = {}
    for f, tri in enumerate(F):
        for k in range(3):
            key = (int(tri[k]), int(tri[(k + 1) % 3]))
            if key in directed:
                raise NonWatertight(f"edge {key} used twice in the same direction (inconsistent winding)")
            directed[key] = (f, k)
    nb = np.empty((len(F), 3), dtype=np.int64)
    for (a, b), (f, k) in directed.items():
        other = directed.get((b, a))
        if other is None:
            raise NonWatertight(f"boundary edge ({a}, {b}) on face {f}")
        nb[f, k] = other[0]
    return nb


def parse_obj(text, name=""):
    verts = []
    faces = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    if i == 0:
                        raise ValueError("OBJ indices are 1-based")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise ParseError(f"{name or '<obj>'}:{lineno}: {exc}: {raw!r}") from None
    if not verts or not faces:
        raise ParseError(f"{name or '<obj>'}: no vertices or faces")
    faces = np.array(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(verts):
        raise ParseError(f"{name or '<obj>'}: face index out of range")
    return TriangleMesh(np.array(verts), faces, name=name)


def load_mesh(path):
    """Load a Wavefront OBJ (``v``/``f`` records only), or a ``builtin:<name>`` mesh."""
    path = str(path)
    if path.startswith("builtin:"):
        from .shapes import builtin_path

        path = str(builtin_path(path.split(":", 1)[1]))
    p = Path(path)
    return parse_obj(p.read_text(), name=p.stem)


def write_obj(mesh_or_vf, path):
    if isinstance(mesh_or_vf, TriangleMesh):
        V, F = mesh_or_vf.vertices, mesh_or_vf.faces
    else:
        V, F = mesh_or_vf
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in V]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in F]
    Path(path).write_text("\n".join(lines) + "\n")


def signed_distance(mesh, query):
    v, g, c, _, _ = kernels.query(mesh, np.asarray(query, dtype=float).reshape(1, 3))
    return SdfResult(float(v[0]), g[0], c[0])


def batch_signed_distance(mesh, queries):
    pts = queries.points if isinstance(queries, PointCloud) else np.asarray(queries, dtype=float).reshape(-1, 3)
    if len(pts) < 1:
        raise ValueError("point cloud is empty")
    v, g, c, _, _ = kernels.query(mesh, pts)
    return [SdfResult(float(v[i]), g[i], c[i]) for i in range(len(v))]


def sample_surface(mesh, n, seed, frame="object"):
    """Area-weighted surface samples.

    Counts per triangle are the floor of their area share, the remainder
    drawn multinomially, so per-face counts track area closely; positions
    within each triangle are uniform.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    w = mesh.face_areas / mesh.face_areas.sum()
    counts = np.floor(n * w).astype(np.int64)
    rest = n - counts.sum()
    if rest:
        counts += np.bincount(rng.choice(len(w), size=rest, p=w), minlength=len(w))
    face = np.repeat(np.arange(len(w)), counts)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = mesh.tris[face]
    pts = (1.0 - r1)[:, None] * t[:, 0] + (r1 * (1.0 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    pts = pts[rng.permutation(n)]
    return PointCloud(pts, frame)
