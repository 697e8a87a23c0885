"""Planar triangle meshes.

A :class:`TriMesh` is immutable once built. It owns the vertex positions,
the triangle list (stored counter-clockwise), the derived edge list and the
vertex/edge/triangle incidence maps the solver walks during a run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "MeshError",
    "MeshParseError",
    "DegenerateTriangleError",
    "DanglingIndexError",
    "PointOutsideMeshError",
    "MeshQuality",
    "TriMesh",
    "quality",
    "barycentric_on_edge",
    "project_on_segment",
    "segment_distances",
    "interpolate",
    "load_mesh",
    "read_mesh",
    "format_mesh",
    "write_mesh",
    "generate_rect_mesh",
]


class MeshError(ValueError):
    """Invalid mesh input."""


class MeshParseError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DegenerateTriangleError(MeshError):
    pass


class DanglingIndexError(MeshError):
    pass


class PointOutsideMeshError(MeshError):
    pass


@dataclass(frozen=True)
class MeshQuality:
    h_max: float
    h_min: float
    ratio_m: float
    n_vertices: int
    n_edges: int
    n_triangles: int

    def check(self, m_bound: float = 50.0) -> None:
        """Raise :class:`MeshError` unless ``1 <= h_max/h_min <= m_bound``."""
        if not (1.0 <= self.ratio_m <= m_bound):
            raise MeshError(
                f"mesh quality ratio h_max/h_min = {self.ratio_m:.4g} outside [1, {m_bound}]"
            )

    def __str__(self) -> str:
        return (
            f"vertices={self.n_vertices} edges={self.n_edges} triangles={self.n_triangles} "
            f"h_max={self.h_max:.6g} h_min={self.h_min:.6g} M={self.ratio_m:.4g}"
        )


def _csr(keys: np.ndarray, vals: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((vals, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, keys + 1, 1)
    return np.cumsum(ptr), vals[order].astype(np.int64)


class TriMesh:
    """Conforming 2-D triangulation with full adjacency.

    Parameters
    ----------
    points : array_like, shape (n, 2)
    triangles : array_like of int, shape (t, 3)
        0-based vertex indices. Orientation is normalized to counter-clockwise.

    Edges are derived. Each edge ``(i, j)`` is stored with its endpoints
    ordered lexicographically by position, so geometric computations on an
    edge do not depend on the vertex numbering.
    """

    def __init__(self, points, triangles):
        pts = np.array(points, dtype=float)
        tris = np.array(triangles, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise MeshError("points must be a nonempty (n, 2) array")
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
            raise MeshError("triangles must be a nonempty (t, 3) array")
        if not np.all(np.isfinite(pts)):
            raise MeshError("non-finite vertex coordinate")
        n = len(pts)
        bad = (tris < 0) | (tris >= n)
        if bad.any():
            t, k = np.argwhere(bad)[0]
            raise DanglingIndexError(
                f"triangle {t} references vertex {tris[t, k]} but only {n} vertices exist"
            )
        if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
            raise DegenerateTriangleError("triangle with repeated vertex")

        p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
        cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        scale = np.ptp(pts, axis=0).max() or 1.0
        tiny = np.abs(cross) <= 1e-14 * scale * scale
        if tiny.any():
            raise DegenerateTriangleError(f"triangle {int(np.argmax(tiny))} has zero area")
        cw = cross < 0
        tris[cw] = tris[cw][:, [0, 2, 1]]

        # directed edges of CCW triangles; a repeat means two triangles overlap
        directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        dkey = directed[:, 0] * n + directed[:, 1]
        _, dcount = np.unique(dkey, return_counts=True)
        if np.any(dcount > 1):
            raise MeshError("overlapping or inconsistently oriented triangles")

        undirected = np.sort(directed, axis=1)
        key = undirected[:, 0] * n + undirected[:, 1]
        ukeys, first, inverse, counts = np.unique(key, return_index=True, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        edges = undirected[first]
        # endpoint order by position (x, then y)
        pa, pb = pts[edges[:, 0]], pts[edges[:, 1]]
        swap = (pa[:, 0] > pb[:, 0]) | ((pa[:, 0] == pb[:, 0]) & (pa[:, 1] > pb[:, 1]))
        edges[swap] = edges[swap][:, ::-1]

        nt = len(tris)
        tri_edges = inverse.reshape(3, nt).T.copy()  # columns: (v0,v1), (v1,v2), (v2,v0)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        tri_ids = np.tile(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        inv_sorted = inverse[order]
        starts = np.searchsorted(inv_sorted, np.arange(len(edges)))
        slot = np.arange(len(order)) - starts[inv_sorted]
        edge_tris[inv_sorted, slot] = tri_ids[order]

        used = np.zeros(n, dtype=bool)
        used[tris.ravel()] = True
        if not used.all():
            raise MeshError(f"vertex {int(np.argmin(used))} is not part of any triangle")

        self.points = pts
        self.triangles = tris
        self.edges = edges
        self.tri_edges = tri_edges
        self.edge_tris = edge_tris
        e = edges
        self._nbr_ptr, self._nbr = _csr(np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]), n)
        eid = np.arange(len(e))
        self._ve_ptr, self._ve = _csr(np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([eid, eid]), n)
        self._vt_ptr, self._vt = _csr(tris.ravel(), np.repeat(np.arange(nt), 3), n)
        for arr in (self.points, self.triangles, self.edges, self.tri_edges, self.edge_tris):
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def neighbors(self, v: int) -> np.ndarray:
        return self._nbr[self._nbr_ptr[v]:self._nbr_ptr[v + 1]]

    def vertex_edges(self, v: int) -> np.ndarray:
        return self._ve[self._ve_ptr[v]:self._ve_ptr[v + 1]]

    def vertex_triangles(self, v: int) -> np.ndarray:
        return self._vt[self._vt_ptr[v]:self._vt_ptr[v + 1]]

    def edge_triangles(self, e: int) -> list[int]:
        return [int(t) for t in self.edge_tris[e] if t >= 0]

    @cached_property
    def neighbor_lists(self) -> list[list[int]]:
        return [self.neighbors(v).tolist() for v in range(self.n_vertices)]

    @cached_property
    def vertex_edge_lists(self) -> list[list[int]]:
        return [self.vertex_edges(v).tolist() for v in range(self.n_vertices)]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.points[self.edges[:, 1]] - self.points[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges].ravel())

    def edge_id(self, i: int, j: int) -> int:
        for e in self.vertex_edges(i):
            a, b = self.edges[e]
            if (a == i and b == j) or (a == j and b == i):
                return int(e)
        raise KeyError(f"no edge between {i} and {j}")

    def quality(self) -> MeshQuality:
        return quality(self)

    # point location -------------------------------------------------------

    @cached_property
    def _locator(self):
        p = self.points[self.triangles]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        origin = self.points.min(axis=0)
        cell = max(float(np.median(hi - lo)), 1e-300)
        ilo = np.floor((lo - origin) / cell).astype(np.int64)
        ihi = np.floor((hi - origin) / cell).astype(np.int64)
        buckets: dict[tuple[int, int], list[int]] = {}
        for t in range(self.n_triangles):
            for i in range(ilo[t, 0], ihi[t, 0] + 1):
                for j in range(ilo[t, 1], ihi[t, 1] + 1):
                    buckets.setdefault((i, j), []).append(t)
        return origin, cell, {k: np.array(v) for k, v in buckets.items()}

    def locate(self, x, tol: float = 1e-12) -> tuple[int, np.ndarray]:
        """Return ``(triangle, zeta)`` with ``x = sum(zeta_j * p_j)``.

        Raises :class:`PointOutsideMeshError` if no triangle contains ``x``.
        ``tol`` is the allowed negative barycentric slack for points on edges.
        """
        x = np.asarray(x, dtype=float)
        origin, cell, buckets = self._locator
        key = tuple(np.floor((x - origin) / cell).astype(np.int64).tolist())
        cand = buckets.get(key)
        if cand is not None:
            zeta = _barycentric_many(self.points[self.triangles[cand]], x)
            ok = np.all(zeta >= -tol, axis=1)
            if ok.any():
                k = int(np.flatnonzero(ok)[0])
                return int(cand[k]), zeta[k]
        raise PointOutsideMeshError(f"point {tuple(x.tolist())} lies outside the mesh")


def _barycentric_many(tri_pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    v0 = b - a
    v1 = c - a
    v2 = x - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def quality(mesh: TriMesh) -> MeshQuality:
    """Longest edge, smallest triangle altitude and their ratio."""
    lengths = mesh.edge_lengths
    h_max = float(lengths.max())
    p = mesh.points[mesh.triangles]
    area2 = np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )
    longest = lengths[mesh.tri_edges].max(axis=1)
    h_min = float((area2 / longest).min())
    return MeshQuality(h_max, h_min, h_max / h_min, mesh.n_vertices, mesh.n_edges, mesh.n_triangles)


def project_on_segment(x, a, b) -> tuple[tuple[float, float], float]:
    """Closest point of segment ab to x as barycentric ``(zeta_a, zeta_b)`` plus distance."""
    ax, ay = float(a[0]), float(a[1])
    dx, dy = float(b[0]) - ax, float(b[1]) - ay
    px, py = float(x[0]) - ax, float(x[1]) - ay
    ll = dx * dx + dy * dy
    t = 0.0 if ll == 0.0 else min(1.0, max(0.0, (px * dx + py * dy) / ll))
    return (1.0 - t, t), math.hypot(px - t * dx, py - t * dy)


def segment_distances(x, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from point ``x`` to each segment ``a[k] b[k]``."""
    d = b - a
    p = np.asarray(x, dtype=float) - a
    ll = np.einsum("ij,ij->i", d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ll > 0, np.einsum("ij,ij->i", p, d) / ll, 0.0)
    t = np.clip(t, 0.0, 1.0)
    r = p - t[:, None] * d
    return np.hypot(r[:, 0], r[:, 1])


def barycentric_on_edge(mesh: TriMesh, x, e: int) -> tuple[tuple[float, float], float]:
    """Project ``x`` onto edge ``e``; zeta weights follow ``mesh.edges[e]`` order."""
    i, j = mesh.edges[e]
    return project_on_segment(x, mesh.points[i], mesh.points[j])


def interpolate(mesh: TriMesh, field, x) -> float:
    """Piecewise-linear interpolation of a per-vertex field at ``x``."""
    t, zeta = mesh.locate(x)
    vals = np.asarray(field, dtype=float)[mesh.triangles[t]]
    return float(np.dot(zeta, vals))


# text format --------------------------------------------------------------

def load_mesh(text: str) -> TriMesh:
    """Parse the line format ``v <x> <y>`` / ``t <i> <j> <k>`` with ``#`` comments."""
    pts: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        tag, args = fields[0], fields[1:]
        if tag == "v":
            if len(args) != 2:
                raise MeshParseError(lineno, f"expected 'v <x> <y>', got {raw.strip()!r}")
            try:
                pts.append((float(args[0]), float(args[1])))
            except ValueError:
                raise MeshParseError(lineno, f"bad coordinate in {raw.strip()!r}") from None
        elif tag == "t":
            if len(args) != 3:
                raise MeshParseError(lineno, f"expected 't <i> <j> <k>', got {raw.strip()!r}")
            try:
                tri = tuple(int(a) for a in args)
            except ValueError:
                raise MeshParseError(lineno, f"bad vertex index in {raw.strip()!r}") from None
            tris.append(tri)
            tri_lines.append(lineno)
        else:
            raise MeshParseError(lineno, f"unknown record type {tag!r}")
    if not pts:
        raise MeshError("mesh has no vertices")
    if not tris:
        raise MeshError("mesh has no triangles")
    n = len(pts)
    for tri, lineno in zip(tris, tri_lines):
        for i in tri:
            if not 0 <= i < n:
                raise DanglingIndexError(f"line {lineno}: vertex index {i} out of range (have {n} vertices)")
    return TriMesh(pts, tris)


def read_mesh(path) -> TriMesh:
    return load_mesh(Path(path).read_text(encoding="utf-8"))


def format_mesh(mesh: TriMesh) -> str:
    lines = [f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.points.tolist()]
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def write_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh), encoding="utf-8")


# generation ---------------------------------------------------------------

def generate_rect_mesh(bounds, target_h: float, jitter: float = 0.0, seed: int = 0) -> TriMesh:
    """Jittered structured triangulation of an axis-aligned rectangle.

    The rectangle ``bounds = (x0, y0, x1, y1)`` is cut into ``ceil(w/h)`` by
    ``ceil(h_y/h)`` cells. Interior vertices move by a uniform offset of at
    most ``jitter`` times the cell spacing per axis; boundary vertices stay
    exactly on the rectangle. Each cell is split along its shorter diagonal.
    """
    x0, y0, x1, y1 = (float(v) for v in bounds)
    w, hgt = x1 - x0, y1 - y0
    if not (w > 0 and hgt > 0):
        raise MeshError(f"degenerate bounds {bounds}")
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    if target_h > min(w, hgt):
        raise MeshError(f"target_h={target_h} exceeds the smallest extent {min(w, hgt)}")
    if not 0.0 <= jitter <= 0.3:
        raise MeshError(f"jitter={jitter} outside [0, 0.3]")

    nx = max(1, math.ceil(w / target_h - 1e-9))
    ny = max(1, math.ceil(hgt / target_h - 1e-9))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # row j, column i
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    rng = np.random.default_rng(seed)
    offset = rng.uniform(-1.0, 1.0, size=pts.shape) * jitter * np.array([w / nx, hgt / ny])
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    interior = ((ii > 0) & (ii < nx) & (jj > 0) & (jj < ny)).ravel()
    pts[interior] += offset[interior]

    def vid(i, j):
        return j * (nx + 1) + i

    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    v00, v10, v01, v11 = vid(ci, cj), vid(ci + 1, cj), vid(ci, cj + 1), vid(ci + 1, cj + 1)
    d1 = np.linalg.norm(pts[v11] - pts[v00], axis=1)
    d2 = np.linalg.norm(pts[v01] - pts[v10], axis=1)
    use1 = d1 <= d2
    t_a = np.where(use1[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    t_b = np.where(use1[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))
    tris = np.empty((2 * len(ci), 3), dtype=np.int64)
    tris[0::2] = t_a
    tris[1::2] = t_b
    return TriMesh(pts, tris)
