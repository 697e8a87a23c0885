"""Continuous and numerical Hamiltonians, and executable checks built on them.

The continuous Hamiltonian is ``H(x, p) = -min_u (p.u + g(x, u))`` over unit
vectors ``u``. Its discrete counterpart over a stencil ``S`` of edges is::

    Ht[S, phi](x_i, mu) = -min_{s in S, z in [0, 1]} ((z phi(a_s) + (1-z) phi(b_s) - mu) / tau + g(x_i, u))

where ``tau`` and ``u`` are the length and direction of ``x(z) - x_i``. The
update value of the solver is the unique root in ``mu`` of ``Ht``; the checks
below exercise that root property, monotonicity in ``phi`` and first-order
consistency with ``H``.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .mesh import TriMesh, segment_distances
from .problem import InvalidWeightError, WeightField, golden_section

log = logging.getLogger(__name__)

__all__ = [
    "InvalidStencilError",
    "Stencil",
    "DiagnosticRow",
    "CheckReport",
    "ConsistencyReport",
    "hamiltonian",
    "numerical_hamiltonian",
    "ring_stencil",
    "check_equivalence",
    "check_monotonicity",
    "check_consistency",
    "check_hjb_residual",
]

N_DIRECTIONS = 512


class InvalidStencilError(ValueError):
    pass


@dataclass(frozen=True)
class Stencil:
    """A set of mesh edges used to evaluate the numerical Hamiltonian at ``owner``."""

    owner: int
    edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64).reshape(-1))

    def validate(self, mesh: TriMesh) -> None:
        if len(self.edges) == 0:
            raise InvalidStencilError(f"empty stencil at vertex {self.owner}")
        if np.any((self.edges < 0) | (self.edges >= mesh.n_edges)):
            raise InvalidStencilError("stencil references an unknown edge")
        ends = mesh.edges[self.edges]
        if np.any(ends == self.owner):
            raise InvalidStencilError(f"stencil edge contains its owner vertex {self.owner}")


@dataclass
class DiagnosticRow:
    check: str
    vertex_id: int
    residual: float
    threshold: float
    passed: bool


@dataclass
class CheckReport:
    rows: list[DiagnosticRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def n_failed(self) -> int:
        return sum(not r.passed for r in self.rows)

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)

    def extend(self, other: "CheckReport") -> "CheckReport":
        self.rows.extend(other.rows)
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "vertex_id", "residual", "threshold", "pass"])
        for r in self.rows:
            w.writerow([r.check, r.vertex_id, repr(float(r.residual)), repr(float(r.threshold)),
                        "true" if r.passed else "false"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


# continuous Hamiltonian ----------------------------------------------------

def hamiltonian(x, p, weight: WeightField, n_samples: int = N_DIRECTIONS, tol: float = 1e-12) -> float:
    """``-min_u (p.u + g(x, u))`` over unit vectors ``u``.

    The circle is sampled at ``n_samples`` angles; the three best local minima
    are then refined by golden-section search to ``tol`` radians.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    t = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    us = np.column_stack([np.cos(t), np.sin(t)])
    vals = us @ p + weight.many(np.broadcast_to(x, us.shape), us)
    if not np.all(vals - us @ p > 0):
        raise InvalidWeightError("weight evaluated to a nonpositive value")
    local = np.flatnonzero((vals <= np.roll(vals, 1)) & (vals <= np.roll(vals, -1)))
    local = local[np.argsort(vals[local], kind="stable")][:3]

    def f(s: float) -> float:
        u = (math.cos(s), math.sin(s))
        return float(p[0] * u[0] + p[1] * u[1] + weight(x, u))

    step = 2.0 * math.pi / n_samples
    best = float(vals.min())
    for k in local:
        _, fv = golden_section(f, t[k] - step, t[k] + step, tol)
        best = min(best, fv)
    return -best


# numerical Hamiltonian -----------------------------------------------------

def _ham_fns(weight: WeightField):
    if weight.compiled:
        return _kernels.ham_edge_batch, weight.kernel
    return _kernels.ham_edge_batch_py, weight.py_kernel


def _edge_fns(weight: WeightField):
    if weight.compiled:
        return _kernels.edge_cost_batch, weight.kernel
    return _kernels.edge_cost_batch_py, weight.py_kernel


def _default_tol(mesh: TriMesh) -> float:
    return 1e-12 * float(mesh.edge_lengths.max())


def _stencil_arrays(mesh: TriMesh, stencil: Stencil, phi):
    ends = mesh.edges[stencil.edges]
    phi = np.asarray(phi, dtype=float)
    va, vb = phi[ends[:, 0]], phi[ends[:, 1]]
    if not (np.all(np.isfinite(va)) and np.all(np.isfinite(vb))):
        raise ValueError("phi must be finite on stencil vertices")
    a = np.ascontiguousarray(mesh.points[ends[:, 0]])
    b = np.ascontiguousarray(mesh.points[ends[:, 1]])
    xi = np.ascontiguousarray(np.broadcast_to(mesh.points[stencil.owner], a.shape))
    return xi, a, b, va, vb


def _ham_terms(stencil: Stencil, phi, mu: float, mesh: TriMesh, weight: WeightField,
               tol: float | None) -> tuple[np.ndarray, np.ndarray]:
    stencil.validate(mesh)
    xi, a, b, va, vb = _stencil_arrays(mesh, stencil, phi)
    fn, k = _ham_fns(weight)
    tol = _default_tol(mesh) if tol is None else tol
    q, z, status = fn(k, weight.params, xi, a, b, va, vb, np.full(len(va), float(mu)), tol, 200)
    if status == 1:
        raise InvalidWeightError("weight evaluated to a nonpositive or non-finite value")
    if status == 2:
        raise InvalidStencilError(f"stencil edge passes through vertex {stencil.owner}")
    return q, z


def numerical_hamiltonian(stencil: Stencil, phi, mu: float, mesh: TriMesh, weight: WeightField,
                          tol: float | None = None) -> float:
    """Numerical Hamiltonian of ``phi`` over ``stencil`` at its owner vertex, for value ``mu``."""
    q, _ = _ham_terms(stencil, phi, mu, mesh, weight, tol)
    return -float(q.min())


def stencil_update(stencil: Stencil, phi, mesh: TriMesh, weight: WeightField,
                   tol: float | None = None) -> tuple[float, int, float]:
    """Minimal one-edge update over ``stencil``: ``(value, edge position, z)``."""
    stencil.validate(mesh)
    xi, a, b, va, vb = _stencil_arrays(mesh, stencil, phi)
    fn, k = _edge_fns(weight)
    tol = _default_tol(mesh) if tol is None else tol
    cost, z, status = fn(k, weight.params, xi, a, b, va, vb, tol, 200)
    if status == 1:
        raise InvalidWeightError("weight evaluated to a nonpositive or non-finite value")
    j = int(np.argmin(cost))
    return float(cost[j]), j, float(z[j])


# stencils ------------------------------------------------------------------

def ring_stencil(mesh: TriMesh, v: int, depth: int = 1, max_dist: float | None = None) -> Stencil | None:
    """Closed ring of edges around vertex ``v``.

    Takes all triangles touching a vertex within graph distance ``depth - 1``
    of ``v`` and returns the edges on the outer boundary of their union.
    Returns None if that union reaches the mesh boundary, so that every
    returned ring surrounds ``v``. With ``max_dist`` set, ring edges farther
    than ``max_dist`` from ``v`` are dropped.
    """
    inner = {v}
    frontier = {v}
    for _ in range(depth - 1):
        frontier = {w for u in frontier for w in mesh.neighbor_lists[u]} - inner
        inner |= frontier
    tris = np.unique(np.concatenate([mesh.vertex_triangles(u) for u in inner]))
    te = mesh.tri_edges[tris].reshape(-1)
    uniq, counts = np.unique(te, return_counts=True)
    ring = uniq[counts == 1]
    if np.any(np.isin(ring, mesh.boundary_edges)):
        return None
    if max_dist is not None:
        d = segment_distances(mesh.points[v], mesh.points[mesh.edges[ring, 0]], mesh.points[mesh.edges[ring, 1]])
        ring = ring[d <= max_dist]
    if len(ring) == 0:
        return None
    return Stencil(int(v), ring)


# checks --------------------------------------------------------------------

def check_equivalence(stencil: Stencil, values, mesh: TriMesh, weight: WeightField,
                      tol: float | None = None, g_max: float | None = None) -> CheckReport:
    """Check that the update value over ``stencil`` is the root of the numerical Hamiltonian.

    Rows: ``equivalence`` (|Ht(mu~)| against 1e-8 g_max), ``root_bracket``
    (Ht changes sign across mu~), ``argmin`` (the minimizer of Ht reproduces
    the update value).
    """
    g_max = weight.g_max if g_max is None else g_max
    if g_max is None:
        raise ValueError("g_max required for weights without closed-form constants")
    mu, _, _ = stencil_update(stencil, values, mesh, weight, tol)
    q, z = _ham_terms(stencil, values, mu, mesh, weight, tol)
    res = abs(float(q.min()))
    thr = 1e-8 * g_max
    rows = [DiagnosticRow("equivalence", stencil.owner, res, thr, res <= thr)]

    delta = 1e-6 * max(1.0, abs(mu))
    lo = numerical_hamiltonian(stencil, values, mu - delta, mesh, weight, tol)
    hi = numerical_hamiltonian(stencil, values, mu + delta, mesh, weight, tol)
    rows.append(DiagnosticRow("root_bracket", stencil.owner, min(-lo, hi), 0.0, lo < 0.0 < hi))

    j = int(np.argmin(q))
    single = Stencil(stencil.owner, stencil.edges[j:j + 1])
    xi, a, b, va, vb = _stencil_arrays(mesh, single, values)
    zj = float(z[j])
    x = zj * a[0] + (1.0 - zj) * b[0]
    tau = float(np.hypot(*(x - xi[0])))
    f = zj * va[0] + (1.0 - zj) * vb[0] + tau * weight(xi[0], (x - xi[0]) / tau)
    gap = abs(f - mu)
    rows.append(DiagnosticRow("argmin", stencil.owner, gap, 1e-8 * max(1.0, abs(mu)),
                              gap <= 1e-8 * max(1.0, abs(mu))))
    return CheckReport(rows)


def check_monotonicity(stencil: Stencil, mesh: TriMesh, weight: WeightField, trials: int,
                       seed: int = 0, mu: float | None = None, scale: float = 1.0,
                       tol: float | None = None, slack: float = 1e-10) -> CheckReport:
    """Randomized check that a pointwise larger ``phi`` never increases the numerical Hamiltonian.

    Each trial draws ``phi_lo`` on the stencil vertices and a nonnegative
    increment for ``phi_hi``; both agree at the owner. The residual is
    ``Ht[phi_hi] - Ht[phi_lo]``, which must not exceed ``slack``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    stencil.validate(mesh)
    verts = np.unique(mesh.edges[stencil.edges])
    rows = []
    for _ in range(trials):
        lo = np.zeros(mesh.n_vertices)
        lo[verts] = rng.uniform(0.0, scale, len(verts))
        hi = lo.copy()
        bump = rng.uniform(0.0, scale, len(verts)) * (rng.random(len(verts)) < 0.5)
        hi[verts] += bump
        m = float(rng.uniform(0.0, scale)) if mu is None else mu
        h_lo = numerical_hamiltonian(stencil, lo, m, mesh, weight, tol)
        h_hi = numerical_hamiltonian(stencil, hi, m, mesh, weight, tol)
        diff = h_hi - h_lo
        rows.append(DiagnosticRow("monotonicity", stencil.owner, diff, slack, diff <= slack))
    return CheckReport(rows)


@dataclass
class ConsistencyReport:
    h_max: np.ndarray
    errors: np.ndarray
    slope: float
    c1_ratio: np.ndarray
    report: CheckReport


def check_consistency(meshes: Sequence[TriMesh], weight: WeightField,
                      phi: Callable[[np.ndarray], np.ndarray],
                      grad: Callable[[np.ndarray], np.ndarray],
                      hessian_norm: float = 0.0, gamma: float = 1.0, depth: int = 1,
                      interior: Callable[[np.ndarray], np.ndarray] | None = None,
                      tol: float | None = None) -> ConsistencyReport:
    """Max ``|H(x_i, grad phi) - Ht[S, phi](x_i, phi(x_i))|`` per mesh and its log-log slope.

    ``S`` is the ring stencil of ``depth`` around each interior vertex, cut to
    edges within ``(2 gamma + 1) h_max``. ``interior`` optionally masks the
    vertices to examine. ``c1_ratio`` is the measured error over
    ``C1 |D^2 phi| h_max`` with ``C1 = M (1 + (2 gamma + 1)^2) / 2``; it is
    reported, not asserted.
    """
    hs, errs, ratios = [], [], []
    report = CheckReport()
    for mesh in meshes:
        q = mesh.quality()
        vals = np.asarray(phi(mesh.points), dtype=float)
        grads = np.asarray(grad(mesh.points), dtype=float)
        mask = np.ones(mesh.n_vertices, bool) if interior is None else np.asarray(interior(mesh.points), bool)
        rmax = (2.0 * gamma + 1.0) * q.h_max
        worst = 0.0
        for v in np.flatnonzero(mask).tolist():
            st = ring_stencil(mesh, v, depth, rmax)
            if st is None:
                continue
            ht = numerical_hamiltonian(st, vals, vals[v], mesh, weight, tol)
            h = hamiltonian(mesh.points[v], grads[v], weight)
            worst = max(worst, abs(h - ht))
        c1 = q.ratio_m * (1.0 + (2.0 * gamma + 1.0) ** 2) / 2.0
        ratio = worst / (c1 * hessian_norm * q.h_max) if hessian_norm > 0 else 0.0
        hs.append(q.h_max)
        errs.append(worst)
        ratios.append(ratio)
        report.rows.append(DiagnosticRow("consistency", -1, worst, c1 * hessian_norm * q.h_max,
                                         hessian_norm == 0 or worst <= c1 * hessian_norm * q.h_max))
        log.info("consistency h_max=%.4g max|H-Ht|=%.3e", q.h_max, worst)
    hs_a, errs_a = np.asarray(hs), np.asarray(errs)
    if len(hs) >= 2 and np.all(errs_a > 0):
        slope = float(np.polyfit(np.log(hs_a), np.log(errs_a), 1)[0])
    else:
        slope = math.nan
    return ConsistencyReport(hs_a, errs_a, slope, np.asarray(ratios), report)


def check_hjb_residual(mesh: TriMesh, weight: WeightField, values, stencils: dict[int, np.ndarray],
                       vertices: Sequence[int], g_max: float, tol: float | None = None) -> CheckReport:
    """Residual ``|Ht[S_i, V](x_i, V(x_i))|`` of a solved field at each of ``vertices``.

    ``stencils`` maps a vertex to its edge set, typically the Near Front
    recorded at the moment the vertex was accepted. A vertex with an empty
    stencil fails with an infinite residual.
    """
    thr = 1e-8 * g_max
    rows = []
    values = np.asarray(values, dtype=float)
    for v in vertices:
        edges = stencils.get(int(v))
        if edges is None or len(edges) == 0:
            rows.append(DiagnosticRow("hjb_residual", int(v), math.inf, thr, False))
            continue
        r = abs(numerical_hamiltonian(Stencil(int(v), edges), values, values[v], mesh, weight, tol))
        rows.append(DiagnosticRow("hjb_residual", int(v), r, thr, r <= thr))
    return CheckReport(rows)
