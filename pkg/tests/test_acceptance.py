"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line before asserting.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from oum.analysis import convergence_study, error_metrics, isotropic_exact, mesh_family, rect_profile_exact
from oum.hamiltonian import check_consistency, check_hjb_residual, check_monotonicity, ring_stencil
from oum.mesh import generate_rect_mesh
from oum.problem import DomainPolygon, isotropic_weight, make_problem, rectangular_profile_weight
from oum.solver import SolverOptions, solve

BIG = (-500.0, -500.0, 500.0, 500.0)
SQUARE = (-1.0, -1.0, 1.0, 1.0)
RECT = rectangular_profile_weight(3.0, 1.0)
ISO = isotropic_weight(1.0)

# every solve made here, for the bounds criterion: (mesh, problem, solution)
SOLVES = []


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def rect_problem_big():
    return make_problem(DomainPolygon.rectangle(*BIG), RECT)


@pytest.fixture(scope="module")
def rect_4k(rect_problem_big):
    mesh = generate_rect_mesh(BIG, 1000 / 64, jitter=0.2, seed=1)
    sol = solve(mesh, rect_problem_big, SolverOptions(record_nf=True, debug_asserts="full"))
    SOLVES.append((mesh, rect_problem_big, sol))
    return mesh, sol


@pytest.mark.slow
def test_criterion_1_convergence_rates(capsys, rect_problem_big):
    meshes = mesh_family(BIG, 1000 / 64, 4, jitter=0.2, seed=1)
    t0 = time.perf_counter()
    rep = convergence_study(meshes, rect_problem_big, rect_profile_exact)
    elapsed = time.perf_counter() - t0
    ok = (0.40 <= rep.overall_r_max <= 0.70 and 0.85 <= rep.overall_r_avg <= 1.20 and elapsed <= 900
          and meshes[0].n_vertices >= 3000 and meshes[-1].n_vertices <= 300_000)
    report(capsys, 1, ok, f"r_avg={rep.overall_r_avg:.4f} r_max={rep.overall_r_max:.4f} "
                          f"vertices {meshes[0].n_vertices}..{meshes[-1].n_vertices} in {elapsed:.0f}s")
    with capsys.disabled():
        print(rep)
    assert ok


def test_criterion_2_isotropic_oracle(capsys):
    problem = make_problem(DomainPolygon.rectangle(*SQUARE), ISO)
    errs, bounds = [], []
    for mesh in mesh_family(SQUARE, 0.2, 4, jitter=0.2, seed=1):
        sol = solve(mesh, problem)
        SOLVES.append((mesh, problem, sol))
        errs.append(error_metrics(sol, isotropic_exact, mesh, problem.domain).max_error)
        bounds.append(1.5 * sol.h_max)
    ok = all(e <= b for e, b in zip(errs, bounds)) and all(b < a for a, b in zip(errs, errs[1:]))
    report(capsys, 2, ok, "max errors " + ", ".join(f"{e:.4g} (limit {b:.4g})" for e, b in zip(errs, bounds)))
    assert ok


def test_criterion_3_numerical_hjb_residual(capsys, rect_4k, rect_problem_big):
    mesh, sol = rect_4k
    interior = np.flatnonzero(rect_problem_big.domain.contains(mesh.points))
    rep = check_hjb_residual(mesh, RECT, sol.values, sol.nf_snapshots, interior, rect_problem_big.g_max)
    ok = rep.passed
    report(capsys, 3, ok, f"{len(rep.rows) - rep.n_failed}/{len(rep.rows)} interior vertices within "
                          f"{1e-8 * rect_problem_big.g_max:.1e}, worst residual {rep.max_residual:.3e}")
    assert ok


def test_criterion_4_monotonicity(capsys):
    mesh = generate_rect_mesh(SQUARE, 0.2, jitter=0.2, seed=7)
    rng = np.random.default_rng(2024)
    stencils = []
    while len(stencils) < 100:
        st = ring_stencil(mesh, int(rng.integers(mesh.n_vertices)), depth=int(rng.integers(1, 3)))
        if st is not None:
            stencils.append(st)
    violations, trials, worst = 0, 0, -math.inf
    for k, st in enumerate(stencils):
        weight = RECT if k % 2 == 0 else ISO
        rep = check_monotonicity(st, mesh, weight, 100, seed=k, slack=1e-10)
        violations += rep.n_failed
        trials += len(rep.rows)
        worst = max(worst, rep.max_residual)
    ok = trials == 10_000 and violations == 0
    report(capsys, 4, ok, f"{violations} violations in {trials} trials, worst increase {worst:.2e}")
    assert ok


def test_criterion_5_consistency_order(capsys):
    meshes = mesh_family(SQUARE, 0.2, 4, jitter=0.2, seed=1)
    gamma = math.sqrt(10)
    quad = check_consistency(meshes, RECT, lambda p: 0.5 * np.sum(p * p, axis=1), lambda p: p,
                             hessian_norm=1.0, gamma=gamma)
    aff = check_consistency(meshes, RECT, lambda p: p @ [0.7, -0.4] + 2.0,
                            lambda p: np.broadcast_to([0.7, -0.4], p.shape), gamma=gamma)
    ok = quad.slope >= 0.8 and aff.errors.max() <= 1e-8
    report(capsys, 5, ok, f"slope {quad.slope:.3f}, affine residual {aff.errors.max():.2e}")
    assert ok


def test_criterion_7_acceptance_order(capsys, rect_4k, rect_problem_big):
    mesh, sol = rect_4k
    drops = int(sol.stats["order_drops"])
    max_drop = float(sol.stats["max_order_drop"])
    # rows (i, V_i, Vmin over the front just before acceptance)
    log = sol.acceptance_log
    vi, vmin = log[:, 1], log[:, 2]
    lo = vmin + sol.h_min * rect_problem_big.g_min
    hi = vmin + sol.h_max * rect_problem_big.g_max
    slack = 1e-9 * np.maximum(1.0, np.abs(vi))
    gap_ok = bool(np.all((lo - slack <= vi) & (vi <= hi + slack)))
    ok = drops == 0 and gap_ok
    report(capsys, 7, ok, f"order drops beyond 1e-12: {drops} (largest {max_drop:.3g}); "
                          f"gap bound {'holds' if gap_ok else 'violated'} at {len(log)} acceptances")
    assert ok


def test_criterion_6_bounds_and_lipschitz(capsys):
    problem = make_problem(DomainPolygon.rectangle(*SQUARE), RECT)
    for seed in (1, 2):
        mesh = generate_rect_mesh(SQUARE, 0.12, jitter=0.2, seed=seed)
        SOLVES.append((mesh, problem, solve(mesh, problem)))
    bad_bounds, bad_lip, small = 0, 0, 0
    for mesh, pb, sol in SOLVES:
        dist = np.where(pb.domain.contains(mesh.points), pb.domain.distance_to_boundary(mesh.points), 0.0)
        v = sol.values
        bad_bounds += int(np.sum((v < pb.q_min) | (v > pb.g_max * dist + pb.q_max + 1e-9)))
        if mesh.n_vertices <= 500:
            small += 1
            c = mesh.quality().ratio_m ** 2 * pb.g_max
            d = np.hypot(*(mesh.points[:, None, :] - mesh.points[None, :, :]).transpose(2, 0, 1))
            bad_lip += int(np.sum(np.abs(v[:, None] - v[None, :]) > c * d + 1e-9))
    ok = bad_bounds == 0 and bad_lip == 0 and small >= 2
    report(capsys, 6, ok, f"{len(SOLVES)} solves, {bad_bounds} bound violations, "
                          f"{bad_lip} Lipschitz violations on {small} small meshes")
    assert ok


def test_criterion_8_determinism(capsys, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = subprocess.run([sys.executable, "-m", "oum.cli", "solve", "--gen",
                            "bounds=-500,-500,500,500,h=62.5,jitter=0.2,seed=9", "--weight", "rect:a=3,b=1",
                            "--out", str(out)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs.append((out / "solution.csv").read_bytes())
    ok = outs[0] == outs[1]
    report(capsys, 8, ok, f"two runs, {len(outs[0])} bytes each, identical={ok}")
    assert ok
