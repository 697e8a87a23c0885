"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code; only plain numpy and
textbook searches are used.
"""
from __future__ import annotations

import heapq
import math

import numpy as np


def rect_g(u, a=3.0, b=1.0):
    return max(abs(u[0]) / a, abs(u[1]) / b)


def rect_g_by_boundary_sampling(u, a, b, n=200_000):
    """1 / radius of the rectangle [-a,a]x[-b,b] along direction u, from dense boundary samples."""
    t = np.linspace(0.0, 1.0, n)
    pts = np.concatenate([
        np.column_stack([a * np.ones(n), -b + 2 * b * t]),
        np.column_stack([-a * np.ones(n), -b + 2 * b * t]),
        np.column_stack([-a + 2 * a * t, b * np.ones(n)]),
        np.column_stack([-a + 2 * a * t, -b * np.ones(n)]),
    ])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    target = math.atan2(u[1], u[0])
    d = np.abs(np.angle(np.exp(1j * (ang - target))))
    k = int(np.argmin(d))
    return 1.0 / float(np.hypot(*pts[k]))


def direction_extrema(g, n=4096):
    """Min and max of g over n uniformly spaced unit directions."""
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    vals = np.array([g((math.cos(s), math.sin(s))) for s in t])
    return float(vals.min()), float(vals.max())


def edge_cost_grid(xi, a, b, va, vb, g, n=100_001):
    """Brute-force minimum of z*va + (1-z)*vb + |x(z)-xi| g(u) over a z grid.

    A second grid of the same size zooms into the best cell, so kinked minima
    are resolved to about 1/n^2.
    """
    a, b, xi = (np.asarray(v, float) for v in (a, b, xi))

    def scan(z):
        xs = z[:, None] * a + (1 - z[:, None]) * b
        d = xs - xi
        tau = np.hypot(d[:, 0], d[:, 1])
        gs = np.array([g(v / t) for v, t in zip(d, tau)])
        f = z * va + (1 - z) * vb + tau * gs
        k = int(np.argmin(f))
        return float(f[k]), float(z[k])

    f, z = scan(np.linspace(0.0, 1.0, n))
    step = 1.0 / (n - 1)
    f2, z2 = scan(np.linspace(max(0.0, z - step), min(1.0, z + step), n))
    return (f2, z2) if f2 < f else (f, z)


def ham_grid(xi, edges, phi_a, phi_b, mu, g, n=10_001):
    """Brute-force numerical Hamiltonian over a list of (a, b) edges."""
    best = math.inf
    z = np.linspace(0.0, 1.0, n)
    for (a, b), pa, pb in zip(edges, phi_a, phi_b):
        xs = z[:, None] * np.asarray(a, float) + (1 - z[:, None]) * np.asarray(b, float)
        d = xs - np.asarray(xi, float)
        tau = np.hypot(d[:, 0], d[:, 1])
        gs = np.array([g(v / t) for v, t in zip(d, tau)])
        q = (z * pa + (1 - z) * pb - mu) / tau + gs
        best = min(best, float(q.min()))
    return -best


def rect_g_many(us, a=3.0, b=1.0):
    return np.maximum(np.abs(us[:, 0]) / a, np.abs(us[:, 1]) / b)


def hamiltonian_scan(p, g_many, n=100_000):
    """-min over directions of p.u + g(u): a uniform scan, then a zoomed scan around the best angle."""
    p = np.asarray(p, float)

    def scan(t):
        u = np.column_stack([np.cos(t), np.sin(t)])
        vals = u @ p + g_many(u)
        k = int(np.argmin(vals))
        return float(vals[k]), float(t[k])

    f, t = scan(np.linspace(0.0, 2 * math.pi, n, endpoint=False))
    step = 2 * math.pi / n
    f2, _ = scan(np.linspace(t - step, t + step, n))
    return -min(f, f2)


def point_segment_distance(x, a, b):
    x, a, b = (np.asarray(v, float) for v in (x, a, b))
    d = b - a
    ll = float(d @ d)
    t = 0.0 if ll == 0 else min(1.0, max(0.0, float((x - a) @ d) / ll))
    return float(np.hypot(*(x - (a + t * d))))


def rect_distance(x, bounds):
    x0, y0, x1, y1 = bounds
    return min(x[0] - x0, x1 - x[0], x[1] - y0, y1 - x[1])


# reference ordered upwind solver ------------------------------------------------

def _edge_min(xi, a, b, va, vb, g):
    def f(z):
        p = z * a + (1 - z) * b - xi
        t = math.hypot(p[0], p[1])
        return z * va + (1 - z) * vb + t * g(p / t)

    # ternary search: F is convex for convex speed profiles
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-15:
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    return min(f(0.5 * (lo + hi)), f(0.0), f(1.0))


def reference_oum(points, triangles, inside, q_values, g, radius):
    """Literal, brute-force transcription of the label-setting algorithm.

    ``inside``: boolean mask of vertices in the open domain. ``q_values``:
    exit cost at the others. Every step recomputes the front and near fronts
    from scratch.
    """
    pts = np.asarray(points, float)
    n = len(pts)
    nbrs = [set() for _ in range(n)]
    edges = set()
    for t in triangles:
        for i in range(3):
            u, v = int(t[i]), int(t[(i + 1) % 3])
            nbrs[u].add(v)
            nbrs[v].add(u)
            edges.add((min(u, v), max(u, v)))
    edges = sorted(edges)
    FAR, CON, ACC = 0, 1, 2
    lab = [FAR] * n
    val = [math.inf] * n
    for v in range(n):
        if not inside[v]:
            lab[v] = ACC
            val[v] = q_values[v]

    def af():
        front = {v for v in range(n) if lab[v] == ACC and any(lab[w] == CON for w in nbrs[v])}
        return [e for e in edges if lab[e[0]] == ACC and lab[e[1]] == ACC and (e[0] in front or e[1] in front)]

    def nf(v, front_edges):
        return [e for e in front_edges if point_segment_distance(pts[v], pts[e[0]], pts[e[1]]) <= radius]

    def update(v, es):
        best = val[v]
        for (i, j) in es:
            best = min(best, _edge_min(pts[v], pts[i], pts[j], val[i], val[j], g))
        val[v] = best

    new = sorted({w for v in range(n) if lab[v] == ACC for w in nbrs[v] if lab[w] == FAR})
    for w in new:
        lab[w] = CON
    front_edges = af()
    for w in new:
        update(w, nf(w, front_edges))

    order = []
    while True:
        cons = [v for v in range(n) if lab[v] == CON]
        if not cons:
            break
        i = min(cons, key=lambda v: (val[v], v))
        lab[i] = ACC
        order.append(i)
        new = sorted(w for w in nbrs[i] if lab[w] == FAR)
        for w in new:
            lab[w] = CON
        front_edges = af()
        for w in new:
            update(w, nf(w, front_edges))
        for w in range(n):
            if lab[w] == CON and w not in new:
                through = [e for e in nf(w, front_edges) if i in e]
                update(w, through)
    return np.array(val), order


def dijkstra_graph_distance(points, triangles, sources):
    """Shortest path along mesh edges; an upper bound for the Euclidean distance field."""
    n = len(points)
    adj = [[] for _ in range(n)]
    for t in triangles:
        for k in range(3):
            u, v = int(t[k]), int(t[(k + 1) % 3])
            w = float(np.hypot(*(points[u] - points[v])))
            adj[u].append((v, w))
            adj[v].append((u, w))
    dist = [math.inf] * n
    heap = []
    for s in sources:
        dist[s] = 0.0
        heap.append((0.0, s))
    heapq.heapify(heap)
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return np.array(dist)
