"""Reference solutions, vertex error metrics and convergence-rate studies."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mesh import TriMesh, generate_rect_mesh
from .problem import DomainPolygon, ProblemSpec
from .solver import Solution, SolverOptions, solve

log = logging.getLogger(__name__)

__all__ = [
    "OutsideBoundsError",
    "rect_profile_exact",
    "isotropic_exact",
    "rect_kink_distance",
    "error_metrics",
    "fit_slope",
    "ConvergenceRow",
    "ConvergenceReport",
    "convergence_study",
    "mesh_family",
    "kink_breakdown",
]


class OutsideBoundsError(ValueError):
    pass


def _points_in_bounds(x, bounds, atol: float = 1e-9) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    x0, y0, x1, y1 = bounds
    slack = atol * max(x1 - x0, y1 - y0)
    inside = ((pts[:, 0] >= x0 - slack) & (pts[:, 0] <= x1 + slack)
              & (pts[:, 1] >= y0 - slack) & (pts[:, 1] <= y1 + slack))
    if not np.all(inside):
        bad = pts[~inside][0]
        raise OutsideBoundsError(f"point ({bad[0]}, {bad[1]}) lies outside {tuple(bounds)}")
    return pts, single


def _planes(pts: np.ndarray, bounds, gx: float, gy: float) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([(y1 - y) * gy, (x1 - x) * gx, (y - y0) * gy, (x - x0) * gx])


def rect_profile_exact(x, bounds=(-500.0, -500.0, 500.0, 500.0), half_widths=(3.0, 1.0)):
    """Exact value for the rectangular speed profile with zero exit cost.

    With ``g_x = 1/a`` and ``g_y = 1/b`` the value is the lowest of four
    planes, one per side of the rectangle. Accepts a point or an (N, 2) array.
    """
    pts, single = _points_in_bounds(x, bounds)
    a, b = half_widths
    v = np.maximum(_planes(pts, bounds, 1.0 / a, 1.0 / b).min(axis=1), 0.0)
    return float(v[0]) if single else v


def isotropic_exact(x, bounds=(-1.0, -1.0, 1.0, 1.0), c: float = 1.0):
    """Distance to the rectangle boundary divided by speed ``c``."""
    pts, single = _points_in_bounds(x, bounds)
    v = np.maximum(_planes(pts, bounds, 1.0, 1.0).min(axis=1), 0.0) / c
    return float(v[0]) if single else v


def rect_kink_distance(x, bounds=(-500.0, -500.0, 500.0, 500.0), half_widths=(3.0, 1.0)) -> np.ndarray:
    """Distance from each point to the tie line of its two lowest planes.

    Near a kink of the four-plane solution this is the distance to the kink.
    """
    pts, _ = _points_in_bounds(x, bounds)
    a, b = half_widths
    gx, gy = 1.0 / a, 1.0 / b
    grads = np.array([[0.0, -gy], [-gx, 0.0], [0.0, gy], [gx, 0.0]])
    p = _planes(pts, bounds, gx, gy)
    order = np.argsort(p, axis=1, kind="stable")
    rows = np.arange(len(pts))
    i, j = order[:, 0], order[:, 1]
    gap = p[rows, j] - p[rows, i]
    return gap / np.linalg.norm(grads[i] - grads[j], axis=1)


@dataclass(frozen=True)
class ErrorMetrics:
    avg_error: float
    max_error: float
    n_vertices: int

    def __iter__(self):
        return iter((self.avg_error, self.max_error))


def error_metrics(solution, exact: Callable, mesh: TriMesh, domain: DomainPolygon) -> ErrorMetrics:
    """Mean and max of ``|V~ - V|`` over mesh vertices in the closed domain."""
    values = solution.values if isinstance(solution, Solution) else np.asarray(solution, dtype=float)
    keep = domain.contains_closed(mesh.points)
    err = np.abs(values[keep] - np.asarray(exact(mesh.points[keep]), dtype=float))
    if len(err) == 0:
        return ErrorMetrics(0.0, 0.0, 0)
    return ErrorMetrics(float(err.mean()), float(err.max()), int(len(err)))


def fit_slope(h, e) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if len(h) < 2:
        raise ValueError("need at least two points to fit a slope")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass(frozen=True)
class ConvergenceRow:
    vertices: int
    triangles: int
    h_max: float
    avg_error: float
    r_avg: float | None
    max_error: float
    r_max: float | None
    seconds: float = 0.0


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    overall_r_avg: float
    overall_r_max: float
    kinks: list = field(default_factory=list)

    @classmethod
    def from_measurements(cls, measurements: Sequence[tuple[int, int, float, float, float]],
                          seconds: Sequence[float] | None = None) -> "ConvergenceReport":
        """Build from ``(vertices, triangles, h_max, avg_error, max_error)`` tuples."""
        ms = sorted(measurements, key=lambda m: -m[2])
        secs = list(seconds) if seconds is not None else [0.0] * len(ms)
        rows = []
        for k, (nv, nt, h, ea, em) in enumerate(ms):
            if k == 0:
                ra = rm = None
            else:
                hp, ap, mp = ms[k - 1][2], ms[k - 1][3], ms[k - 1][4]
                ra = math.log(ap / ea) / math.log(hp / h)
                rm = math.log(mp / em) / math.log(hp / h)
            rows.append(ConvergenceRow(nv, nt, h, ea, ra, em, rm, secs[k]))
        hs = [r.h_max for r in rows]
        return cls(rows, fit_slope(hs, [r.avg_error for r in rows]), fit_slope(hs, [r.max_error for r in rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vertices", "triangles", "h_max", "avg_error", "r_avg", "max_error", "r_max"])
        fmt = lambda r: "" if r is None else repr(float(r))
        for r in self.rows:
            w.writerow([r.vertices, r.triangles, repr(float(r.h_max)), repr(float(r.avg_error)),
                        fmt(r.r_avg), repr(float(r.max_error)), fmt(r.r_max)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def __str__(self) -> str:
        lines = [f"{'vertices':>9} {'h_max':>9} {'avg_error':>11} {'r_avg':>7} {'max_error':>10} {'r_max':>7}"]
        for r in self.rows:
            ra = "" if r.r_avg is None else f"{r.r_avg:.4f}"
            rm = "" if r.r_max is None else f"{r.r_max:.4f}"
            lines.append(f"{r.vertices:>9} {r.h_max:>9.4g} {r.avg_error:>11.4g} {ra:>7} {r.max_error:>10.4g} {rm:>7}")
        lines.append(f"overall r_avg = {self.overall_r_avg:.4f}, r_max = {self.overall_r_max:.4f}")
        return "\n".join(lines)


def _solve_row(mesh: TriMesh, problem: ProblemSpec, exact: Callable, options: SolverOptions | None):
    t0 = time.perf_counter()
    sol = solve(mesh, problem, options)
    dt = time.perf_counter() - t0
    m = error_metrics(sol, exact, mesh, problem.domain)
    q = mesh.quality()
    return (mesh.n_vertices, mesh.n_triangles, q.h_max, m.avg_error, m.max_error), dt


def convergence_study(meshes: Sequence[TriMesh], problem: ProblemSpec, exact: Callable,
                      options: SolverOptions | None = None, jobs: int = 1) -> ConvergenceReport:
    """Solve on each mesh and fit convergence rates of the vertex errors.

    Meshes must have strictly decreasing ``h_max``. With ``jobs > 1`` the
    solves run in separate processes; ``exact`` must then be picklable.
    """
    if len(meshes) < 3:
        raise ValueError("a convergence study needs at least 3 meshes")
    hs = [m.quality().h_max for m in meshes]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("meshes must have strictly decreasing h_max")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_solve_row, m, problem, exact, options) for m in meshes]
            results = [f.result() for f in futs]
    else:
        results = [_solve_row(m, problem, exact, options) for m in meshes]
    for (row, dt) in results:
        log.info("study row: %d vertices, h_max %.4g, avg %.4g, max %.4g (%.1fs)", row[0], row[2], row[3], row[4], dt)
    return ConvergenceReport.from_measurements([r for r, _ in results], [dt for _, dt in results])


def mesh_family(bounds, h0: float, levels: int, jitter: float = 0.2, seed: int = 1) -> list[TriMesh]:
    """Generated meshes with ``target_h = h0 / 2**k`` for ``k < levels``."""
    return [generate_rect_mesh(bounds, h0 / 2 ** k, jitter=jitter, seed=seed) for k in range(levels)]


def kink_breakdown(errors, kink_distance, h_max: float, bands: Sequence[float] = (1.0, 2.0, 4.0)):
    """Vertex errors grouped by distance to the nearest kink, in units of ``h_max``.

    Returns ``(lo, hi, count, avg_error, max_error)`` per band; the last band
    is open ended.
    """
    errors = np.asarray(errors, dtype=float)
    d = np.asarray(kink_distance, dtype=float) / h_max
    edges = [0.0, *bands, math.inf]
    out = []
    for lo, hi in zip(edges, edges[1:]):
        sel = (d >= lo) & (d < hi)
        e = errors[sel]
        out.append((lo, hi, int(sel.sum()), float(e.mean()) if len(e) else math.nan,
                    float(e.max()) if len(e) else math.nan))
    return out
