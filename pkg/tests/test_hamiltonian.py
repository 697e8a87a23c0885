import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ham_grid, hamiltonian_scan, rect_g, rect_g_many
from oum.analysis import rect_kink_distance
from oum.hamiltonian import (CheckReport, InvalidStencilError, Stencil, check_consistency, check_equivalence,
                             check_hjb_residual, check_monotonicity, hamiltonian, numerical_hamiltonian,
                             ring_stencil)
from oum.mesh import TriMesh, generate_rect_mesh
from oum.problem import DomainPolygon, InvalidWeightError, WeightField, isotropic_weight, make_problem, rectangular_profile_weight
from oum.solver import SolverOptions, solve

ISO = isotropic_weight(1.0)
RECT = rectangular_profile_weight(3.0, 1.0)


def near(mesh, x, y):
    return int(np.argmin(np.hypot(mesh.points[:, 0] - x, mesh.points[:, 1] - y)))


@pytest.fixture(scope="module")
def mesh():
    return generate_rect_mesh((-1, -1, 1, 1), 0.2, jitter=0.25, seed=21)


def test_hamiltonian_examples():
    assert hamiltonian((0, 0), (0, 0), ISO) == pytest.approx(-1.0, abs=1e-14)
    assert hamiltonian((0, 0), (0.6, -0.8), ISO) == pytest.approx(0.0, abs=1e-12)
    assert hamiltonian((0, 0), (1 / 3, 0), RECT) == pytest.approx(0.0, abs=1e-12)
    assert hamiltonian_scan((1 / 3, 0), rect_g_many) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_hamiltonian_matches_direction_scan(px, py):
    h = hamiltonian((0.1, 0.2), (px, py), RECT)
    ref = hamiltonian_scan((px, py), rect_g_many)
    # the scan can only miss the minimum, so it never overestimates H
    assert ref - 1e-12 <= h <= ref + 1e-9


def test_hamiltonian_of_exact_solution_vanishes(rng):
    bounds, hw = (-500, -500, 500, 500), (3, 1)
    pts = rng.uniform(-480, 480, (400, 2))
    pts = pts[rect_kink_distance(pts, bounds, hw) > 30]
    grads = np.array([[0, -1], [-1 / 3, 0], [0, 1], [1 / 3, 0]])
    for x in pts:
        x0, y0 = x
        planes = [500 - y0, (500 - x0) / 3, 500 + y0, (500 + x0) / 3]
        p = grads[int(np.argmin(planes))]
        assert abs(hamiltonian(x, p, RECT)) <= 2e-6


def test_single_edge_example():
    m = TriMesh([(0, 0), (-1, 1), (1, 1)], [(0, 1, 2)])
    st_ = Stencil(0, [m.edge_id(1, 2)])
    h = numerical_hamiltonian(st_, np.zeros(3), 0.0, m, ISO)
    assert h == pytest.approx(-1.0, abs=1e-15)
    ref = ham_grid((0, 0), [((-1, 1), (1, 1))], [0.0], [0.0], 0.0, lambda u: 1.0)
    assert ref == pytest.approx(-1.0)


def test_stencil_validation(mesh):
    v = near(mesh, 0.1, 0.2)
    with pytest.raises(InvalidStencilError):
        numerical_hamiltonian(Stencil(v, mesh.vertex_edges(v)[:1]), np.zeros(mesh.n_vertices), 0.0, mesh, ISO)
    with pytest.raises(InvalidStencilError):
        numerical_hamiltonian(Stencil(v, []), np.zeros(mesh.n_vertices), 0.0, mesh, ISO)


def test_matches_grid_oracle(mesh, rng):
    for v in rng.choice(mesh.n_vertices, 15, replace=False):
        st_ = ring_stencil(mesh, int(v), depth=2)
        if st_ is None:
            continue
        phi = rng.uniform(0, 1, mesh.n_vertices)
        mu = float(rng.uniform(0, 1))
        h = numerical_hamiltonian(st_, phi, mu, mesh, RECT)
        ends = mesh.edges[st_.edges]
        ref = ham_grid(mesh.points[v], [(mesh.points[i], mesh.points[j]) for i, j in ends],
                       phi[ends[:, 0]], phi[ends[:, 1]], mu, rect_g, n=4001)
        assert ref - 1e-12 <= h <= ref + 1e-3


def test_mu_shift_lower_bound(mesh):
    v = near(mesh, -0.3, 0.4)
    st_ = ring_stencil(mesh, v)
    phi = 0.3 * mesh.points[:, 0] ** 2
    ends = mesh.edges[st_.edges]
    far = max(np.hypot(*(mesh.points[ends[:, k]] - mesh.points[v]).T).max() for k in (0, 1))
    for d in (1e-3, 0.1, 1.0):
        h0 = numerical_hamiltonian(st_, phi, 0.2, mesh, RECT)
        h1 = numerical_hamiltonian(st_, phi, 0.2 + d, mesh, RECT)
        assert h1 - h0 >= d / far - 1e-12


def test_monotone_in_each_vertex_value(mesh, rng):
    v = near(mesh, 0.0, 0.0)
    st_ = ring_stencil(mesh, v, depth=2)
    phi = rng.uniform(0, 1, mesh.n_vertices)
    base = numerical_hamiltonian(st_, phi, 0.5, mesh, RECT)
    for w in np.unique(mesh.edges[st_.edges]):
        bumped = phi.copy()
        bumped[w] += 1e-6
        assert numerical_hamiltonian(st_, bumped, 0.5, mesh, RECT) <= base + 1e-12


def test_monotonicity_examples(mesh):
    v = near(mesh, 0.5, -0.5)
    st_ = ring_stencil(mesh, v)
    phi = np.linspace(0, 1, mesh.n_vertices)
    same = numerical_hamiltonian(st_, phi, 0.3, mesh, RECT)
    assert numerical_hamiltonian(st_, phi.copy(), 0.3, mesh, RECT) == same
    up = phi + 0.25
    up[v] = phi[v]
    assert numerical_hamiltonian(st_, up, 0.3, mesh, RECT) <= same
    rep = check_monotonicity(st_, mesh, RECT, 200, seed=4)
    assert rep.passed and len(rep.rows) == 200


def test_equivalence_on_random_stencils(mesh, rng):
    checked = 0
    for v in rng.permutation(mesh.n_vertices)[:60]:
        st_ = ring_stencil(mesh, int(v), depth=int(rng.integers(1, 3)))
        if st_ is None:
            continue
        st_ = Stencil(st_.owner, st_.edges[rng.random(len(st_.edges)) < 0.7] if len(st_.edges) > 3 else st_.edges)
        if len(st_.edges) == 0:
            continue
        phi = rng.uniform(0, 2, mesh.n_vertices)
        rep = check_equivalence(st_, phi, mesh, RECT)
        assert rep.passed, rep.rows
        checked += 1
    assert checked >= 20


def test_root_is_unique(mesh):
    st_ = ring_stencil(mesh, near(mesh, 0.3, 0.3))
    phi = 1 + 0.5 * mesh.points[:, 1]
    mus = np.linspace(-2, 4, 61)
    hs = [numerical_hamiltonian(st_, phi, m, mesh, RECT) for m in mus]
    assert np.all(np.diff(hs) > 0)
    assert np.sum(np.diff(np.sign(hs)) != 0) == 1


def test_consistency_affine_is_exact():
    ms = [generate_rect_mesh((-1, -1, 1, 1), h, jitter=0.2, seed=3) for h in (0.25, 0.125)]
    r = check_consistency(ms, RECT, lambda p: p @ [0.4, -0.9] + 1, lambda p: np.broadcast_to([0.4, -0.9], p.shape),
                          gamma=math.sqrt(10))
    assert r.errors.max() <= 1e-8


def test_consistency_quadratic_first_order():
    ms = [generate_rect_mesh((-1, -1, 1, 1), 0.2 / 2 ** k, jitter=0.2, seed=1) for k in range(3)]
    r = check_consistency(ms, RECT, lambda p: 0.5 * np.sum(p * p, axis=1), lambda p: p,
                          hessian_norm=1.0, gamma=math.sqrt(10))
    ratios = r.errors[1:] / r.errors[:-1]
    assert np.all((ratios >= 0.3) & (ratios <= 0.8))
    assert r.slope >= 0.8
    assert np.all(r.c1_ratio < 1)


def test_ring_stencil_shape(mesh):
    v = int(np.argmin(np.hypot(*mesh.points.T)))
    st_ = ring_stencil(mesh, v)
    assert len(st_.edges) == len(mesh.vertex_triangles(v))
    assert ring_stencil(mesh, int(mesh.boundary_vertices[0])) is None
    big = ring_stencil(mesh, v, depth=2)
    assert len(big.edges) > len(st_.edges)


def test_hjb_residual_report_and_csv(mesh):
    problem = make_problem(DomainPolygon.rectangle(-1, -1, 1, 1), ISO)
    sol = solve(mesh, problem, SolverOptions(record_nf=True))
    inside = np.flatnonzero(problem.domain.contains(mesh.points))
    rep = check_hjb_residual(mesh, ISO, sol.values, sol.nf_snapshots, inside, problem.g_max)
    assert len(rep.rows) == len(inside)
    text = rep.to_csv().splitlines()
    assert text[0] == "check,vertex_id,residual,threshold,pass"
    assert text[1].startswith("hjb_residual,")
    missing = check_hjb_residual(mesh, ISO, sol.values, {}, inside[:1], 1.0)
    assert not missing.passed


def test_invalid_weight_detected(mesh):
    bad = WeightField.from_function(lambda x, u: -0.5)
    with pytest.raises(InvalidWeightError):
        numerical_hamiltonian(ring_stencil(mesh, near(mesh, 0, 0)), np.zeros(mesh.n_vertices), 0.0, mesh, bad)
    with pytest.raises(InvalidWeightError):
        hamiltonian((0, 0), (1, 0), bad)


def test_report_aggregates():
    rep = CheckReport()
    assert rep.passed and rep.max_residual == 0.0
