"""Problem data: convex domain, direction-dependent weight, exit cost."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels

__all__ = [
    "InvalidWeightError",
    "DomainPolygon",
    "WeightField",
    "WeightConstants",
    "ConstantCost",
    "VertexTableCost",
    "ProblemSpec",
    "rectangular_profile_weight",
    "isotropic_weight",
    "ellipse_weight",
    "derive_constants",
    "project_to_boundary",
    "make_problem",
    "golden_section",
]


class InvalidWeightError(ValueError):
    """A weight evaluated to a nonpositive or non-finite value."""


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float, max_iter: int = 200) -> tuple[float, float]:
    """Minimize a unimodal scalar function on ``[lo, hi]``; returns ``(x, f(x))``."""
    invphi = _kernels.INV_PHI
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


# domain -------------------------------------------------------------------

class DomainPolygon:
    """Convex polygon, stored counter-clockwise.

    ``contains`` is about the open set: points on the boundary are outside.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least 3 two-dimensional vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area2 == 0:
            raise ValueError("polygon has empty interior")
        if area2 < 0:
            v = v[::-1].copy()
        e = np.roll(v, -1, axis=0) - v
        turn = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
        if np.any(turn < -1e-12 * np.abs(area2)):
            raise ValueError("polygon is not convex")
        self.vertices = v
        self.vertices.flags.writeable = False
        self._a = v
        self._b = np.roll(v, -1, axis=0)
        lo, hi = v.min(axis=0), v.max(axis=0)
        self._eps = 1e-12 * float(np.max(hi - lo))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "DomainPolygon":
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @property
    def area(self) -> float:
        v = self.vertices
        return 0.5 * float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    def signed_distances(self, pts) -> np.ndarray:
        """Per point, the minimum over edges of the inward offset (positive inside)."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self._b - self._a
        n = np.stack([-d[:, 1], d[:, 0]], axis=1) / np.hypot(d[:, 0], d[:, 1])[:, None]
        inward = np.einsum("pkj,kj->pk", p[:, None, :] - self._a[None, :, :], n)
        return inward.min(axis=1)

    def contains(self, pts) -> np.ndarray | bool:
        """True for points strictly inside (farther than a relative 1e-12 from the boundary)."""
        p = np.asarray(pts, dtype=float)
        res = self.signed_distances(p) > self._eps
        return bool(res[0]) if p.ndim == 1 else res

    def contains_closed(self, pts) -> np.ndarray | bool:
        """True for points inside or on the boundary, within the same tolerance."""
        p = np.asarray(pts, dtype=float)
        res = self.signed_distances(p) >= -self._eps
        return bool(res[0]) if p.ndim == 1 else res

    def closest_boundary_points(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self._b - self._a
        ll = np.einsum("kj,kj->k", d, d)
        rel = p[:, None, :] - self._a[None, :, :]
        t = np.clip(np.einsum("pkj,kj->pk", rel, d) / ll, 0.0, 1.0)
        proj = self._a[None, :, :] + t[..., None] * d[None, :, :]
        dist = np.hypot(*(proj - p[:, None, :]).transpose(2, 0, 1))
        k = np.argmin(dist, axis=1)
        return proj[np.arange(len(p)), k]

    def distance_to_boundary(self, pts) -> np.ndarray | float:
        p = np.asarray(pts, dtype=float)
        q = self.closest_boundary_points(p)
        d = np.hypot(*(q - np.atleast_2d(p)).T)
        return float(d[0]) if p.ndim == 1 else d

    def sample_boundary(self, n: int) -> np.ndarray:
        """``n`` points spaced evenly by arc length along the boundary."""
        seg = np.hypot(*(self._b - self._a).T)
        s = np.linspace(0.0, seg.sum(), n, endpoint=False)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        k = np.searchsorted(cum, s, side="right") - 1
        t = (s - cum[k]) / seg[k]
        return self._a[k] + t[:, None] * (self._b[k] - self._a[k])

    def sample_interior(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        v = self.vertices
        tri = np.stack([np.repeat(v[:1], len(v) - 2, axis=0), v[1:-1], v[2:]], axis=1)
        e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        a = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        pick = rng.choice(len(tri), size=n, p=a / a.sum())
        r1, r2 = rng.random(n), rng.random(n)
        flip = r1 + r2 > 1
        r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
        t = tri[pick]
        return t[:, 0] + r1[:, None] * (t[:, 1] - t[:, 0]) + r2[:, None] * (t[:, 2] - t[:, 0])


def project_to_boundary(domain: DomainPolygon, x) -> np.ndarray:
    """Nearest point of the polygon boundary to ``x``."""
    return domain.closest_boundary_points(x)[0]


# weights ------------------------------------------------------------------

class WeightField:
    """Weight g(x, u) > 0 per unit length travelled through x in direction u.

    Backed by a compiled kernel ``(params, x, y, ux, uy) -> float`` when one
    is available; otherwise by a Python function ``fn(x, u)``, which the
    solver runs through the uncompiled code path.

    ``g_min``/``g_max``/``lipschitz`` carry closed-form constants for the
    built-in weights and are None for user weights.
    """

    def __init__(self, kernel, params, *, kind: str, g_min: float | None = None,
                 g_max: float | None = None, lipschitz: float | None = None,
                 position_independent: bool = False, python_fn: Callable | None = None):
        self.kernel = kernel
        self.params = np.asarray(params, dtype=float)
        self.kind = kind
        self.g_min = g_min
        self.g_max = g_max
        self.lipschitz = lipschitz
        self.position_independent = position_independent
        self._python_fn = python_fn

    @classmethod
    def from_function(cls, fn: Callable, *, kind: str = "custom", position_independent: bool = False) -> "WeightField":
        """Wrap a Python ``fn(x, u) -> float``."""
        return cls(None, np.zeros(0), kind=kind, position_independent=position_independent, python_fn=fn)

    @property
    def compiled(self) -> bool:
        return self.kernel is not None

    @property
    def closed_form(self) -> bool:
        return self.g_min is not None and self.g_max is not None

    @property
    def py_kernel(self):
        """Kernel-signature callable usable from plain Python."""
        if self.kernel is not None:
            return self.kernel
        fn = self._python_fn
        return lambda params, x, y, ux, uy: float(fn((x, y), (ux, uy)))

    def __call__(self, x, u) -> float:
        if self.kernel is not None:
            return float(self.kernel(self.params, float(x[0]), float(x[1]), float(u[0]), float(u[1])))
        return float(self._python_fn((float(x[0]), float(x[1])), (float(u[0]), float(u[1]))))

    def many(self, xs, us) -> np.ndarray:
        xs = np.ascontiguousarray(np.broadcast_to(np.asarray(xs, dtype=float), np.shape(us)))
        us = np.ascontiguousarray(us, dtype=float)
        if self.kernel is not None:
            return _kernels.weight_batch(self.kernel, self.params, xs, us)
        return np.array([self(x, u) for x, u in zip(xs, us)])

    def __repr__(self) -> str:
        return f"WeightField(kind={self.kind!r}, params={self.params.tolist()})"


def rectangular_profile_weight(half_width_x: float, half_width_y: float) -> WeightField:
    """Weight whose speed profile is the rectangle [-a, a] x [-b, b].

    g(u) = max(|u_x|/a, |u_y|/b). The slowest-cost direction is the
    rectangle's diagonal, so g_min = 1/sqrt(a^2 + b^2), g_max = 1/min(a, b).
    """
    a, b = float(half_width_x), float(half_width_y)
    if not (a > 0 and b > 0):
        raise ValueError("half-widths must be positive")
    return WeightField(_kernels.rectangle_kernel, [a, b], kind="rectangle",
                       g_min=1.0 / math.hypot(a, b), g_max=1.0 / min(a, b),
                       lipschitz=0.0, position_independent=True)


def isotropic_weight(c: float = 1.0) -> WeightField:
    if not c > 0:
        raise ValueError("speed must be positive")
    g = 1.0 / float(c)
    return WeightField(_kernels.isotropic_kernel, [g], kind="isotropic",
                       g_min=g, g_max=g, lipschitz=0.0, position_independent=True)


def ellipse_weight(half_axis_x: float, half_axis_y: float) -> WeightField:
    """Weight whose speed profile is the ellipse with the given half-axes."""
    a, b = float(half_axis_x), float(half_axis_y)
    if not (a > 0 and b > 0):
        raise ValueError("half-axes must be positive")
    return WeightField(_kernels.ellipse_kernel, [a, b], kind="ellipse",
                       g_min=1.0 / max(a, b), g_max=1.0 / min(a, b),
                       lipschitz=0.0, position_independent=True)


@dataclass(frozen=True)
class WeightConstants:
    g_min: float
    g_max: float
    gamma: float
    l_g: float


def _direction_extrema(weight: WeightField, x: np.ndarray, n_dir: int) -> tuple[float, float]:
    theta = 2.0 * np.pi * np.arange(n_dir) / n_dir
    us = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    g = weight.many(np.broadcast_to(x, us.shape), us)
    _check_positive(g)
    step = 2.0 * np.pi / n_dir

    def at(t):
        val = weight(x, (math.cos(t), math.sin(t)))
        _check_positive(val)
        return val

    k = int(np.argmin(g))
    _, gmin = golden_section(at, theta[k] - step, theta[k] + step, 1e-10)
    k = int(np.argmax(g))
    _, neg = golden_section(lambda t: -at(t), theta[k] - step, theta[k] + step, 1e-10)
    return min(gmin, float(g.min())), max(-neg, float(g.max()))


def _check_positive(g) -> None:
    g = np.asarray(g)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise InvalidWeightError("weight evaluated to a nonpositive or non-finite value")


def derive_constants(weight: WeightField, domain: DomainPolygon, n_dir_samples: int = 4096,
                     n_pos_samples: int = 64, seed: int = 0) -> WeightConstants:
    """Bounds of g over sampled positions and directions and a Lipschitz estimate.

    Closed-form constants of built-in weights are returned as is; the sampled
    extrema then only cross-check them.
    """
    if n_dir_samples < 64 or n_pos_samples < 64:
        raise ValueError("need at least 64 direction and position samples")
    pos = domain.sample_interior(n_pos_samples, seed=seed)
    lo, hi = math.inf, -math.inf
    for x in pos:
        a, b = _direction_extrema(weight, x, n_dir_samples)
        lo, hi = min(lo, a), max(hi, b)

    if weight.position_independent:
        l_g = 0.0
    else:
        theta = 2.0 * np.pi * np.arange(64) / 64
        us = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        table = np.array([weight.many(np.broadcast_to(x, us.shape), us) for x in pos])
        _check_positive(table)
        dx = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        dg = np.abs(table[:, None, :] - table[None, :, :]).max(axis=2)
        off = dx > 0
        l_g = float((dg[off] / dx[off]).max()) if off.any() else 0.0

    if weight.closed_form:
        slack = 1e-12 * max(1.0, weight.g_max)
        if lo < weight.g_min - slack or hi > weight.g_max + slack:
            raise ValueError(
                f"closed-form bounds [{weight.g_min}, {weight.g_max}] of {weight!r} "
                f"contradict sampled range [{lo}, {hi}]"
            )
        lo, hi = weight.g_min, weight.g_max
        if weight.lipschitz is not None:
            l_g = weight.lipschitz
    return WeightConstants(lo, hi, hi / lo, l_g)


# boundary cost ------------------------------------------------------------

class ConstantCost:
    """q(x) = value on the whole boundary."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, x, vertex: int | None = None) -> float:
        return self.value

    def bounds(self, domain: DomainPolygon) -> tuple[float, float]:
        return self.value, self.value

    def __repr__(self) -> str:
        return f"ConstantCost({self.value!r})"


class VertexTableCost:
    """Exit cost given per mesh vertex lying on or outside the boundary."""

    def __init__(self, table: dict[int, float]):
        if not table:
            raise ValueError("empty boundary cost table")
        self.table = {int(k): float(v) for k, v in table.items()}

    def __call__(self, x, vertex: int | None = None) -> float:
        if vertex is None or vertex not in self.table:
            raise KeyError(f"no boundary cost for vertex {vertex}")
        return self.table[vertex]

    def bounds(self, domain: DomainPolygon) -> tuple[float, float]:
        vals = list(self.table.values())
        return min(vals), max(vals)


class _CallableCost:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x, vertex=None) -> float:
        return float(self.fn(x))

    def bounds(self, domain: DomainPolygon) -> tuple[float, float]:
        vals = [self.fn(p) for p in domain.sample_boundary(4096)]
        return float(min(vals)), float(max(vals))


@dataclass(frozen=True)
class ProblemSpec:
    """Everything the solver needs besides the mesh. Build with :func:`make_problem`.

    Compatibility of the exit cost with continuity of the value function is
    assumed, not checked; constant costs always qualify.
    """

    domain: DomainPolygon
    weight: WeightField
    boundary_cost: object
    g_min: float
    g_max: float
    gamma: float
    l_g: float
    q_min: float
    q_max: float
    meta: dict = field(default_factory=dict, compare=False)

    def g(self, x, u) -> float:
        """Weight with positions outside the domain mapped to their boundary projection."""
        if not self.domain.contains(np.asarray(x, dtype=float)):
            x = project_to_boundary(self.domain, x)
        return self.weight(x, u)


def make_problem(domain: DomainPolygon, weight: WeightField, boundary_cost=None,
                 n_dir_samples: int = 4096, n_pos_samples: int = 64) -> ProblemSpec:
    if boundary_cost is None:
        boundary_cost = ConstantCost(0.0)
    elif isinstance(boundary_cost, (int, float)):
        boundary_cost = ConstantCost(boundary_cost)
    elif not hasattr(boundary_cost, "bounds"):
        boundary_cost = _CallableCost(boundary_cost)
    c = derive_constants(weight, domain, n_dir_samples, n_pos_samples)
    q_min, q_max = boundary_cost.bounds(domain)
    return ProblemSpec(domain, weight, boundary_cost, c.g_min, c.g_max, c.gamma, c.l_g, q_min, q_max)
