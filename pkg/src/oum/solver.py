"""Ordered upwind label-setting solver for the static HJB boundary-value problem.

Vertices move Far -> Considered -> Accepted. Considered values come from
one-segment semi-Lagrangian updates over the Near Front: the Accepted-Front
edges within ``gamma * h_max`` of the vertex. A Considered vertex of
minimal value is accepted at each step; neighbours are then relabelled and
re-updated.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import _kernels
from .mesh import TriMesh, segment_distances
from .problem import InvalidWeightError, ProblemSpec, WeightField

log = logging.getLogger(__name__)

__all__ = [
    "Label",
    "SolverOptions",
    "SolverState",
    "Solution",
    "SolverError",
    "NoBoundaryError",
    "ConsistencyError",
    "edge_update",
    "near_front",
    "accept_next",
    "solve",
    "write_solution_csv",
    "format_solution_csv",
    "write_solution_vtk",
]

DEBUG_LEVELS = ("off", "cheap", "full")


class Label(IntEnum):
    FAR = 0
    CONSIDERED = 1
    ACCEPTED = 2


FAR, CONSIDERED, ACCEPTED = Label.FAR, Label.CONSIDERED, Label.ACCEPTED


class SolverError(RuntimeError):
    pass


class NoBoundaryError(SolverError):
    pass


class ConsistencyError(SolverError):
    pass


@dataclass
class SolverOptions:
    """Knobs of a solve.

    ``golden_tol_factor`` times ``h_max`` is the golden-section interval
    width, measured along the edge. ``debug_asserts`` is one of ``off``,
    ``cheap`` (acceptance order) or ``full`` (acceptance gap bound, periodic
    front rebuild, re-update cross-check). ``record_nf`` keeps the Near Front
    of each vertex at the instant it is accepted.
    """

    golden_tol_factor: float = 1e-9
    max_golden_iter: int = 200
    debug_asserts: str = "off"
    record_nf: bool = False
    brute_force_nf: bool = False
    rebuild_every: int = 1000

    def __post_init__(self):
        if self.debug_asserts not in DEBUG_LEVELS:
            raise ValueError(f"debug_asserts must be one of {DEBUG_LEVELS}")
        if not self.golden_tol_factor > 0:
            raise ValueError("golden_tol_factor must be positive")


@dataclass
class Solution:
    values: np.ndarray
    accept_order: np.ndarray
    stats: dict
    h_max: float
    h_min: float
    radius: float
    nf_snapshots: dict[int, np.ndarray] | None = None
    update_stencils: dict[int, np.ndarray] | None = None
    acceptance_log: np.ndarray | None = field(default=None, repr=False)

    def interpolate(self, mesh: TriMesh, x) -> float:
        from .mesh import interpolate
        return interpolate(mesh, self.values, x)


def _batch_fns(weight: WeightField):
    if weight.compiled:
        return _kernels.edge_cost_batch, weight.kernel
    return _kernels.edge_cost_batch_py, weight.py_kernel


def _raise_status(status: int) -> None:
    if status == 1:
        raise InvalidWeightError("weight evaluated to a nonpositive or non-finite value")
    if status == 2:
        raise SolverError("update edge passes through the updated vertex")


def edge_update(xi, a, b, va: float, vb: float, weight: WeightField, tol: float,
                max_iter: int = 200) -> tuple[float, tuple[float, float]]:
    """Cost of reaching ``xi`` from segment ``ab`` carrying values ``va``, ``vb``.

    Minimizes ``z*va + (1-z)*vb + |x(z)-xi| g(xi, u)`` over ``z`` in [0, 1]
    with ``x(z) = z*a + (1-z)*b``. Returns ``(cost, (z, 1-z))``.
    """
    if weight.compiled:
        fn, k = _kernels.edge_cost, weight.kernel
    else:
        fn, k = _kernels._edge_cost_impl, weight.py_kernel
    cost, z, status = fn(k, weight.params, float(xi[0]), float(xi[1]), float(a[0]), float(a[1]),
                         float(b[0]), float(b[1]), float(va), float(vb), float(tol), int(max_iter))
    _raise_status(status)
    return cost, (z, 1.0 - z)


class _EdgeHash:
    """Uniform grid of Accepted-Front edges, cell size = Near Front radius."""

    def __init__(self, mesh: TriMesh, cell: float):
        self.cell = cell
        self.origin = mesh.points.min(axis=0)
        p0 = mesh.points[mesh.edges[:, 0]]
        p1 = mesh.points[mesh.edges[:, 1]]
        lo = np.floor((np.minimum(p0, p1) - self.origin) / cell).astype(np.int64)
        hi = np.floor((np.maximum(p0, p1) - self.origin) / cell).astype(np.int64)
        self._lo = lo.tolist()
        self._hi = hi.tolist()
        self.cells: dict[tuple[int, int], set[int]] = {}

    def _keys(self, e):
        (i0, j0), (i1, j1) = self._lo[e], self._hi[e]
        return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]

    def add(self, e: int) -> None:
        for k in self._keys(e):
            s = self.cells.get(k)
            if s is None:
                self.cells[k] = {e}
            else:
                s.add(e)

    def remove(self, e: int) -> None:
        for k in self._keys(e):
            s = self.cells[k]
            s.discard(e)
            if not s:
                del self.cells[k]

    def query(self, x: float, y: float) -> set[int]:
        ci = math.floor((x - self.origin[0]) / self.cell)
        cj = math.floor((y - self.origin[1]) / self.cell)
        out: set[int] = set()
        cells = self.cells
        for i in (ci - 1, ci, ci + 1):
            for j in (cj - 1, cj, cj + 1):
                s = cells.get((i, j))
                if s:
                    out |= s
        return out


class _VertexGrid:
    """Static bucket grid of vertex ids."""

    def __init__(self, points: np.ndarray, cell: float):
        self.cell = cell
        self.origin = points.min(axis=0)
        idx = np.floor((points - self.origin) / cell).astype(np.int64)
        order = np.lexsort((idx[:, 1], idx[:, 0]))
        keys, start = np.unique(idx[order], axis=0, return_index=True)
        bounds = np.append(start, len(order))
        self.buckets = {
            (int(k[0]), int(k[1])): order[bounds[n]:bounds[n + 1]] for n, k in enumerate(keys)
        }

    def in_box(self, lo, hi) -> np.ndarray:
        i0, j0 = np.floor((np.asarray(lo) - self.origin) / self.cell).astype(int)
        i1, j1 = np.floor((np.asarray(hi) - self.origin) / self.cell).astype(int)
        parts = [self.buckets[(i, j)] for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)
                 if (i, j) in self.buckets]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts)


class SolverState:
    """Mutable state of one solve. Construction performs the initialization steps.

    Attributes
    ----------
    labels : ndarray of int8
        :class:`Label` per vertex.
    values : ndarray
        Current value per vertex; ``inf`` stands for Far.
    accepted_front : set of int
        Edge ids with both endpoints Accepted and at least one endpoint
        adjacent to a Considered vertex.
    accept_order : list of int
        Vertices in the order the main loop accepted them (vertices accepted
        during initialization are in ``initial_accepted``).
    """

    def __init__(self, mesh: TriMesh, problem: ProblemSpec, options: SolverOptions | None = None):
        self.mesh = mesh
        self.problem = problem
        self.opts = options or SolverOptions()
        q = mesh.quality()
        self.h_max = q.h_max
        self.h_min = q.h_min
        self.radius = problem.gamma * self.h_max
        self.tol = self.opts.golden_tol_factor * self.h_max
        n = mesh.n_vertices
        self.labels = np.zeros(n, dtype=np.int8)
        self.values = np.full(n, np.inf)
        self.heap: list[tuple[float, int]] = []
        self.accepted_front: set[int] = set()
        self.accept_order: list[int] = []
        self.initial_accepted: list[int] = []
        self.stats = dict(pushes=0, pops=0, stale_pops=0, edge_updates=0, nf_queries=0,
                          nf_edge_visits=0, nf_empty_fallbacks=0, step6_updates=0,
                          af_rebuild_checks=0, order_drops=0, max_order_drop=0.0)
        self.nf_snapshots: dict[int, np.ndarray] | None = {} if self.opts.record_nf else None
        self.update_stencils: dict[int, list[np.ndarray]] | None = {} if self.opts.record_nf else None
        self._acc_log: list[tuple[int, float, float]] = []
        self._last_value = -math.inf

        self._P = mesh.points
        self._E = mesh.edges
        self._A = np.ascontiguousarray(mesh.points[mesh.edges[:, 0]])
        self._B = np.ascontiguousarray(mesh.points[mesh.edges[:, 1]])
        self._nbrs = mesh.neighbor_lists
        self._vedges = mesh.vertex_edge_lists
        self._e0 = mesh.edges[:, 0].tolist()
        self._e1 = mesh.edges[:, 1].tolist()
        self._ncons = [0] * n
        self._hash = _EdgeHash(mesh, self.radius)
        self._vgrid = _VertexGrid(mesh.points, self.radius)
        self._batch, self._wfn = _batch_fns(problem.weight)
        self._initialize()

    # helpers ------------------------------------------------------------

    def _in_af(self, e: int) -> bool:
        a, b = self._e0[e], self._e1[e]
        lab = self.labels
        if lab[a] != ACCEPTED or lab[b] != ACCEPTED:
            return False
        return self._ncons[a] > 0 or self._ncons[b] > 0

    def _refresh_edges(self, edges) -> None:
        af = self.accepted_front
        for e in edges:
            inside = self._in_af(e)
            if inside and e not in af:
                af.add(e)
                self._hash.add(e)
            elif not inside and e in af:
                af.discard(e)
                self._hash.remove(e)

    def _rebuild_af(self) -> set[int]:
        lab = self.labels
        e0, e1 = self._E[:, 0], self._E[:, 1]
        ncons = np.asarray(self._ncons)
        both = (lab[e0] == ACCEPTED) & (lab[e1] == ACCEPTED)
        front = (ncons[e0] > 0) | (ncons[e1] > 0)
        return set(np.flatnonzero(both & front).tolist())

    def near_front(self, v: int, brute_force: bool | None = None) -> np.ndarray:
        """Edge ids of the Accepted Front within the Near Front radius of vertex ``v``."""
        brute = self.opts.brute_force_nf if brute_force is None else brute_force
        x = self._P[v]
        if brute:
            cand = np.fromiter(self.accepted_front, dtype=np.int64, count=len(self.accepted_front))
        else:
            cset = self._hash.query(x[0], x[1])
            cand = np.fromiter(cset, dtype=np.int64, count=len(cset))
        self.stats["nf_queries"] += 1
        if len(cand) == 0:
            return cand
        self.stats["nf_edge_visits"] += len(cand)
        d = segment_distances(x, self._A[cand], self._B[cand])
        return np.sort(cand[d <= self.radius])

    def _costs(self, verts: np.ndarray, edges: np.ndarray) -> np.ndarray:
        if len(verts) == 0:
            return np.zeros(0)
        vals = self.values
        e = self._E[edges]
        cost, _, status = self._batch(
            self._wfn, self.problem.weight.params,
            np.ascontiguousarray(self._P[verts]), self._A[edges], self._B[edges],
            vals[e[:, 0]], vals[e[:, 1]], self.tol, self.opts.max_golden_iter,
        )
        _raise_status(status)
        self.stats["edge_updates"] += len(verts)
        return cost

    def _point_costs(self, v: int, sources) -> np.ndarray:
        # degenerate edges (a == b): straight-line cost from each source vertex
        src = np.asarray(sources, dtype=np.int64)
        pts = np.ascontiguousarray(self._P[src])
        xi = np.ascontiguousarray(np.broadcast_to(self._P[v], pts.shape))
        vals = self.values[src]
        cost, _, status = self._batch(self._wfn, self.problem.weight.params, xi, pts, pts,
                                      vals, vals, self.tol, self.opts.max_golden_iter)
        _raise_status(status)
        return cost

    def _full_update_pairs(self, verts) -> tuple[list[np.ndarray], list[np.ndarray], list[tuple[int, float]]]:
        vs, es, fallback = [], [], []
        for v in verts:
            nf = self.near_front(v)
            if len(nf) == 0:
                self.stats["nf_empty_fallbacks"] += 1
                src = [k for k in self._nbrs[v] if self.labels[k] == ACCEPTED]
                near = sorted({e for k in src for e in self._vedges[k] if e in self.accepted_front})
                if near:
                    nf = np.asarray(near, dtype=np.int64)
                else:
                    if src:
                        fallback.append((v, float(self._point_costs(v, src).min())))
                    continue
            vs.append(np.full(len(nf), v, dtype=np.int64))
            es.append(nf)
        return vs, es, fallback

    def _apply(self, verts: np.ndarray, edges: np.ndarray, extra=()) -> None:
        if len(verts):
            cost = self._costs(verts, edges)
            if self.update_stencils is not None:
                for v in np.unique(verts):
                    self.update_stencils.setdefault(int(v), []).append(edges[verts == v])
            uniq, inv = np.unique(verts, return_inverse=True)
            best = np.full(len(uniq), np.inf)
            np.minimum.at(best, inv, cost)
            cand = list(zip(uniq.tolist(), best.tolist()))
        else:
            cand = []
        cand.extend(extra)
        vals = self.values
        for v, c in cand:
            if c < vals[v]:
                vals[v] = c
                heapq.heappush(self.heap, (c, v))
                self.stats["pushes"] += 1

    def front_vertices(self) -> np.ndarray:
        """Accepted vertices with at least one Considered neighbour."""
        return np.flatnonzero((self.labels == ACCEPTED) & (np.asarray(self._ncons) > 0))

    def _vmin_af(self) -> float:
        front = self.front_vertices()
        return float(self.values[front].min()) if len(front) else math.inf

    # algorithm ------------------------------------------------------------

    def _initialize(self) -> None:
        mesh, problem = self.mesh, self.problem
        outside = ~problem.domain.contains(mesh.points)
        boundary = np.flatnonzero(outside)
        if len(boundary) == 0:
            raise NoBoundaryError("no mesh vertex lies on or outside the domain boundary")
        proj = problem.domain.closest_boundary_points(mesh.points[boundary])
        for v, xh in zip(boundary.tolist(), proj):
            self.values[v] = problem.boundary_cost(xh, vertex=v)
            self.labels[v] = ACCEPTED
        self.initial_accepted = boundary.tolist()

        new = []
        for v in boundary.tolist():
            for k in self._nbrs[v]:
                if self.labels[k] == FAR:
                    self.labels[k] = CONSIDERED
                    new.append(k)
        for k in new:
            for w in self._nbrs[k]:
                self._ncons[w] += 1
        for e in self._rebuild_af():
            self.accepted_front.add(e)
            self._hash.add(e)
        vs, es, fb = self._full_update_pairs(new)
        self._apply(np.concatenate(vs) if vs else np.zeros(0, np.int64),
                    np.concatenate(es) if es else np.zeros(0, np.int64), fb)

    def _pop(self) -> int | None:
        heap, vals, lab = self.heap, self.values, self.labels
        while heap:
            c, v = heapq.heappop(heap)
            self.stats["pops"] += 1
            if lab[v] == CONSIDERED and vals[v] == c:
                return v
            self.stats["stale_pops"] += 1
        return None

    def accept_next(self) -> int | None:
        """Accept the Considered vertex of least value and update the rest.

        Returns the accepted vertex id, or None once no Considered vertex is left.
        Ties in value go to the smaller vertex id.
        """
        i = self._pop()
        if i is None:
            return None
        lab, vals, nbrs, ncons = self.labels, self.values, self._nbrs, self._ncons
        vi = float(vals[i])
        level = self.opts.debug_asserts
        if level != "off" and vi < self._last_value - 1e-12:
            # not a failure: re-updates through a fresh front edge can undercut earlier acceptances
            self.stats["order_drops"] += 1
            self.stats["max_order_drop"] = max(self.stats["max_order_drop"], self._last_value - vi)
        if level == "full":
            vmin = self._vmin_af()
            self._acc_log.append((i, vi, vmin))
            lo = vmin + self.h_min * self.problem.g_min
            hi = vmin + self.h_max * self.problem.g_max
            slack = 1e-9 * max(1.0, abs(vi))
            if not (lo - slack <= vi <= hi + slack):
                raise ConsistencyError(
                    f"acceptance gap bound violated at vertex {i}: {vi} not in [{lo}, {hi}]")
        if self.nf_snapshots is not None:
            self.nf_snapshots[i] = self.near_front(i)
        self._last_value = max(self._last_value, vi)

        lab[i] = ACCEPTED
        self.accept_order.append(i)
        new = []
        for j in nbrs[i]:
            if lab[j] == FAR:
                lab[j] = CONSIDERED
                new.append(j)
                for k in nbrs[j]:
                    ncons[k] += 1
        for k in nbrs[i]:
            ncons[k] -= 1

        touched = set(self._vedges[i])
        for k in nbrs[i]:
            if lab[k] == ACCEPTED:
                touched.update(self._vedges[k])
        self._refresh_edges(touched)

        vs, es, fb = self._full_update_pairs(new)

        # re-update Considered vertices whose Near Front contains i, using only edges through i
        through = [e for e in self._vedges[i] if e in self.accepted_front]
        reupdated = np.zeros(0, dtype=np.int64)
        if through:
            ea = self._A[through]
            eb = self._B[through]
            lo = np.minimum(ea, eb).min(axis=0) - self.radius
            hi = np.maximum(ea, eb).max(axis=0) + self.radius
            cand = self._vgrid.in_box(lo, hi)
            cand = cand[lab[cand] == CONSIDERED]
            if new:
                cand = cand[~np.isin(cand, new)]
            if len(cand):
                pts = self._P[cand]
                th = np.asarray(through, dtype=np.int64)
                for k, e in enumerate(th):
                    d = segment_distances_many(pts, ea[k], eb[k])
                    hit = cand[d <= self.radius]
                    if len(hit):
                        vs.append(hit)
                        es.append(np.full(len(hit), e, dtype=np.int64))
                        self.stats["step6_updates"] += len(hit)
                        reupdated = np.concatenate([reupdated, hit])
        self._apply(np.concatenate(vs) if vs else np.zeros(0, np.int64),
                    np.concatenate(es) if es else np.zeros(0, np.int64), fb)

        if level == "full":
            self._full_checks(np.unique(reupdated))
        return i

    def _full_checks(self, reupdated: np.ndarray) -> None:
        for v in reupdated.tolist():
            nf = self.near_front(v)
            if len(nf):
                best = float(self._costs(np.full(len(nf), v, dtype=np.int64), nf).min())
                if self.values[v] > best + 1e-12 * max(1.0, abs(best)):
                    raise ConsistencyError(
                        f"vertex {v} holds {self.values[v]} but its Near Front offers {best}")
        if len(self.accept_order) % self.opts.rebuild_every == 0:
            self.stats["af_rebuild_checks"] += 1
            if self._rebuild_af() != self.accepted_front:
                raise ConsistencyError("incremental Accepted Front differs from a full rebuild")

    def run(self) -> "Solution":
        while self.accept_next() is not None:
            pass
        far = np.flatnonzero(self.labels != ACCEPTED)
        if len(far):
            raise ConsistencyError(f"{len(far)} vertices never accepted (first: {int(far[0])})")
        if not np.all(np.isfinite(self.values)):
            raise ConsistencyError("non-finite value after termination")
        stencils = None
        if self.update_stencils is not None:
            stencils = {v: np.unique(np.concatenate(s)) for v, s in self.update_stencils.items()}
        log_arr = np.array(self._acc_log, dtype=float).reshape(-1, 3) if self._acc_log else None
        return Solution(
            values=self.values.copy(),
            accept_order=np.asarray(self.accept_order, dtype=np.int64),
            stats=dict(self.stats),
            h_max=self.h_max,
            h_min=self.h_min,
            radius=self.radius,
            nf_snapshots=self.nf_snapshots,
            update_stencils=stencils,
            acceptance_log=log_arr,
        )


def segment_distances_many(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each of ``pts`` to the single segment ``ab``."""
    d = b - a
    ll = float(d @ d)
    p = pts - a
    t = np.clip(p @ d / ll, 0.0, 1.0) if ll > 0 else np.zeros(len(pts))
    r = p - t[:, None] * d
    return np.hypot(r[:, 0], r[:, 1])


def near_front(state: SolverState, v: int) -> np.ndarray:
    return state.near_front(v)


def accept_next(state: SolverState) -> int | None:
    return state.accept_next()


def solve(mesh: TriMesh, problem: ProblemSpec, options: SolverOptions | None = None) -> Solution:
    """Run the ordered upwind method to completion on ``mesh``."""
    state = SolverState(mesh, problem, options)
    sol = state.run()
    log.debug("solved %d vertices: %s", mesh.n_vertices, sol.stats)
    return sol


# export -------------------------------------------------------------------

def format_solution_csv(mesh: TriMesh, values) -> str:
    rows = ["vertex_id,x,y,value"]
    for i, ((x, y), v) in enumerate(zip(mesh.points.tolist(), np.asarray(values).tolist())):
        rows.append(f"{i},{x!r},{y!r},{v!r}")
    return "\n".join(rows) + "\n"


def write_solution_csv(mesh: TriMesh, values, path) -> None:
    Path(path).write_text(format_solution_csv(mesh, values), encoding="utf-8")


def write_solution_vtk(mesh: TriMesh, values, path, name: str = "value") -> None:
    """Legacy ASCII VTK unstructured grid with one point-data scalar field."""
    n, t = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", "ordered upwind solution", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.points.tolist()]
    out.append(f"CELLS {t} {4 * t}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {t}")
    out += ["5"] * t
    out += [f"POINT_DATA {n}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in np.asarray(values, dtype=float).tolist()]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
