"""Command-line front end: ``oum {solve,study,diagnose,gen-mesh}``.

Exit codes: 0 success, 1 diagnostic or run failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import convergence_study, error_metrics, isotropic_exact, mesh_family, rect_profile_exact
from .hamiltonian import (CheckReport, DiagnosticRow, check_consistency, check_equivalence,
                          check_monotonicity, ring_stencil)
from .mesh import MeshError, TriMesh, generate_rect_mesh, read_mesh, write_mesh
from .problem import (ConstantCost, DomainPolygon, InvalidWeightError, VertexTableCost, WeightField,
                      ellipse_weight, isotropic_weight, make_problem, rectangular_profile_weight)
from .solver import SolverError, SolverOptions, solve, write_solution_csv, write_solution_vtk

log = logging.getLogger("oum")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# option-string parsing ---------------------------------------------------

_KV = re.compile(r"(\w+)=(.*?)(?=,\w+=|$)")


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``k=v,k=v`` where values may themselves contain commas (``bounds=0,0,1,1``)."""
    out = {m.group(1): m.group(2) for m in _KV.finditer(text)}
    if not out and text:
        raise ConfigError(f"cannot parse {text!r}; expected key=value pairs")
    return out


def parse_bounds(text: str) -> tuple[float, float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad bounds {text!r}") from None
    if len(vals) != 4 or not (vals[2] > vals[0] and vals[3] > vals[1]):
        raise ConfigError(f"bounds must be x0,y0,x1,y1 with x1 > x0 and y1 > y0, got {text!r}")
    return vals


def parse_gen(text: str) -> dict:
    kv = parse_kv(text)
    unknown = set(kv) - {"bounds", "h", "jitter", "seed"}
    if unknown:
        raise ConfigError(f"unknown --gen keys: {sorted(unknown)}")
    if "bounds" not in kv or "h" not in kv:
        raise ConfigError("--gen needs bounds=x0,y0,x1,y1 and h=<target spacing>")
    try:
        return {"bounds": parse_bounds(kv["bounds"]), "h": float(kv["h"]),
                "jitter": float(kv.get("jitter", 0.0)), "seed": int(kv.get("seed", 0))}
    except ValueError as exc:
        raise ConfigError(f"bad --gen value: {exc}") from None


def parse_weight(text: str) -> WeightField:
    kind, _, rest = text.partition(":")
    kv = parse_kv(rest) if rest else {}
    try:
        vals = {k: float(v) for k, v in kv.items()}
    except ValueError:
        raise ConfigError(f"bad weight parameters in {text!r}") from None
    try:
        if kind == "isotropic":
            return isotropic_weight(vals.get("c", 1.0))
        if kind in ("rect", "rectangle"):
            return rectangular_profile_weight(vals.get("a", 3.0), vals.get("b", 1.0))
        if kind == "ellipse":
            return ellipse_weight(vals.get("a", 2.0), vals.get("b", 1.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown weight kind {kind!r}; use isotropic, rect or ellipse")


def parse_cost(text: str):
    kind, _, rest = text.partition(":")
    if kind == "const":
        try:
            return ConstantCost(float(rest or 0.0))
        except ValueError:
            raise ConfigError(f"bad constant cost {rest!r}") from None
    if kind == "table":
        path = Path(rest)
        if not path.is_file():
            raise ConfigError(f"cost table {rest!r} not found")
        table = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line or line.startswith("vertex"):
                continue
            k, v = line.split(",")
            table[int(k)] = float(v)
        return VertexTableCost(table)
    raise ConfigError(f"unknown cost kind {kind!r}; use const:<value> or table:<csv>")


# config ---------------------------------------------------------------------

DEFAULTS = {
    "mesh": None,
    "gen": None,
    "domain": None,
    "weight": "rect:a=3,b=1",
    "q": "const:0",
    "out": "out",
    "jobs": 1,
    "debug_asserts": "off",
    "vtk": False,
    "levels": 4,
    "trials": 1000,
    "seed": 0,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("mesh source (exactly one)")
    src.add_argument("--mesh", action="append", metavar="PATH", help="mesh text file (repeatable for study)")
    src.add_argument("--gen", metavar="SPEC", help="bounds=x0,y0,x1,y1,h=<f>,jitter=<f>,seed=<n>")
    p.add_argument("--domain", metavar="x0,y0,x1,y1", help="domain rectangle (default: generated bounds or mesh box)")
    p.add_argument("--weight", metavar="SPEC", help="isotropic:c=<f> | rect:a=<f>,b=<f> | ellipse:a=<f>,b=<f>")
    p.add_argument("--q", metavar="SPEC", help="const:<f> | table:<csv of vertex_id,value>")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--jobs", type=int, metavar="N", help="parallel solves (study)")
    p.add_argument("--debug-asserts", choices=("off", "cheap", "full"))
    p.add_argument("--seed", type=int, help="seed for randomized diagnostics")
    p.add_argument("--config", metavar="JSON", help="config file; flags override its values")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oum", description="Ordered upwind solver for anisotropic HJB problems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem and write the vertex field")
    _add_common(p)
    p.add_argument("--vtk", action="store_true", help="also write legacy VTK")

    p = sub.add_parser("study", help="convergence study over a mesh family")
    _add_common(p)
    p.add_argument("--levels", type=int, help="levels generated from --gen, halving h each time")

    p = sub.add_parser("diagnose", help="equivalence, monotonicity and consistency checks")
    _add_common(p)
    p.add_argument("--trials", type=int, help="monotonicity trials")

    p = sub.add_parser("gen-mesh", help="write a generated mesh file")
    _add_common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {args.config!r} not found")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON: {exc}") from None
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if isinstance(cfg["mesh"], str):
        cfg["mesh"] = [cfg["mesh"]]
    cfg["command"] = args.command
    return cfg


# building blocks -----------------------------------------------------------

def _domain(cfg: dict, mesh: TriMesh) -> DomainPolygon:
    if cfg["domain"]:
        return DomainPolygon.rectangle(*parse_bounds(cfg["domain"]))
    if cfg["gen"]:
        return DomainPolygon.rectangle(*parse_gen(cfg["gen"])["bounds"])
    lo, hi = mesh.points.min(axis=0), mesh.points.max(axis=0)
    return DomainPolygon.rectangle(lo[0], lo[1], hi[0], hi[1])


def _meshes(cfg: dict, levels: int = 1) -> list[TriMesh]:
    if bool(cfg["mesh"]) == bool(cfg["gen"]):
        raise ConfigError("give exactly one mesh source: --mesh PATH or --gen SPEC")
    if cfg["mesh"]:
        out = []
        for path in cfg["mesh"]:
            if not Path(path).is_file():
                raise ConfigError(f"mesh file {path!r} not found")
            out.append(read_mesh(path))
        return out
    g = parse_gen(cfg["gen"])
    return mesh_family(g["bounds"], g["h"], levels, jitter=g["jitter"], seed=g["seed"])


def exact_solution(weight: WeightField, domain: DomainPolygon, cost):
    """Closed-form value for built-in weights on a rectangle with constant exit cost, else None."""
    if not isinstance(cost, ConstantCost) or len(domain.vertices) != 4:
        return None
    bounds = domain.bounds
    x0, y0, x1, y1 = bounds
    if not np.allclose(np.sort(domain.vertices, axis=0), np.sort([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], axis=0)):
        return None
    if weight.kind == "isotropic":
        return _Shifted(partial(isotropic_exact, bounds=bounds, c=1.0 / weight.params[0]), cost.value)
    if weight.kind == "rectangle":
        return _Shifted(partial(rect_profile_exact, bounds=bounds, half_widths=tuple(weight.params)), cost.value)
    return None


class _Shifted:
    def __init__(self, fn, shift: float):
        self.fn, self.shift = fn, shift

    def __call__(self, x):
        return self.fn(x) + self.shift


def _options(cfg: dict, **kw) -> SolverOptions:
    return SolverOptions(debug_asserts=cfg["debug_asserts"], **kw)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# subcommands ---------------------------------------------------------------

def cmd_solve(cfg: dict) -> int:
    mesh = _meshes(cfg)[0]
    domain = _domain(cfg, mesh)
    weight, cost = parse_weight(cfg["weight"]), parse_cost(cfg["q"])
    problem = make_problem(domain, weight, cost)
    out = _outdir(cfg)
    t0 = time.perf_counter()
    sol = solve(mesh, problem, _options(cfg))
    dt = time.perf_counter() - t0
    write_solution_csv(mesh, sol.values, out / "solution.csv")
    if cfg["vtk"]:
        write_solution_vtk(mesh, sol.values, out / "solution.vtk")
    print(f"vertices {mesh.n_vertices}  h_max {sol.h_max:.6g}  runtime {dt:.2f}s")
    exact = exact_solution(weight, domain, cost)
    if exact is not None:
        m = error_metrics(sol, exact, mesh, domain)
        print(f"avg_error {m.avg_error:.6g}  max_error {m.max_error:.6g}")
    print(f"wrote {out / 'solution.csv'}")
    return EXIT_OK


def cmd_study(cfg: dict) -> int:
    levels = int(cfg["levels"])
    meshes = _meshes(cfg, levels)
    if len(meshes) < 3:
        raise ConfigError("a study needs at least 3 meshes (use --levels >= 3 or several --mesh)")
    domain = _domain(cfg, meshes[0])
    weight, cost = parse_weight(cfg["weight"]), parse_cost(cfg["q"])
    exact = exact_solution(weight, domain, cost)
    if exact is None:
        raise ConfigError("no closed-form solution for this weight, domain and cost")
    problem = make_problem(domain, weight, cost)
    report = convergence_study(meshes, problem, exact, _options(cfg), jobs=int(cfg["jobs"]))
    out = _outdir(cfg)
    report.write_csv(out / "study.csv")
    print(report)
    print(f"wrote {out / 'study.csv'}")
    return EXIT_OK


def run_diagnostics(mesh: TriMesh, weight: WeightField, domain: DomainPolygon, cost, trials: int = 1000,
                    seed: int = 0, n_vertices: int = 20, consistency_meshes=None) -> CheckReport:
    """Equivalence, monotonicity and consistency suites on ``mesh``.

    An invalid weight becomes a failed ``invalid_weight`` row instead of an exception.
    """
    report = CheckReport()
    try:
        problem = make_problem(domain, weight, cost)
        sol = solve(mesh, problem, SolverOptions())
        rng = np.random.default_rng(seed)
        stencils = [st for v in rng.permutation(mesh.n_vertices).tolist()
                    if (st := ring_stencil(mesh, v)) is not None][:n_vertices]
        for st in stencils:
            report.extend(check_equivalence(st, sol.values, mesh, weight, g_max=problem.g_max))
        per = max(1, trials // max(1, len(stencils)))
        for k, st in enumerate(stencils):
            report.extend(check_monotonicity(st, mesh, weight, per, seed=seed + k))
        if consistency_meshes:
            def affine(p):
                return 0.3 * p[:, 0] - 0.2 * p[:, 1] + 1.0

            def affine_grad(p):
                return np.broadcast_to([0.3, -0.2], p.shape)

            aff = check_consistency(consistency_meshes[:1], weight, affine, affine_grad, gamma=problem.gamma)
            report.rows.append(DiagnosticRow("consistency_affine", -1, float(aff.errors[0]), 1e-8,
                                             float(aff.errors[0]) <= 1e-8))
            quad = check_consistency(consistency_meshes, weight, lambda p: 0.5 * np.sum(p * p, axis=1),
                                     lambda p: p, hessian_norm=1.0, gamma=problem.gamma)
            report.extend(quad.report)
            report.rows.append(DiagnosticRow("consistency_slope", -1, quad.slope, 0.8, quad.slope >= 0.8))
    except InvalidWeightError as exc:
        log.error("invalid weight: %s", exc)
        report.rows.append(DiagnosticRow("invalid_weight", -1, float("inf"), 0.0, False))
    return report


def cmd_diagnose(cfg: dict) -> int:
    meshes = _meshes(cfg, 4)
    mesh = meshes[0]
    domain = _domain(cfg, mesh)
    weight, cost = parse_weight(cfg["weight"]), parse_cost(cfg["q"])
    report = run_diagnostics(mesh, weight, domain, cost, trials=int(cfg["trials"]), seed=int(cfg["seed"]),
                             consistency_meshes=meshes if len(meshes) >= 2 else None)
    out = _outdir(cfg)
    report.write_csv(out / "diagnostics.csv")
    by_check: dict[str, list[int]] = {}
    for r in report.rows:
        c = by_check.setdefault(r.check, [0, 0])
        c[0] += 1
        c[1] += not r.passed
    for name, (n, bad) in by_check.items():
        print(f"{name:20s} {n - bad}/{n} passed")
    print(f"wrote {out / 'diagnostics.csv'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gen_mesh(cfg: dict) -> int:
    if not cfg["gen"]:
        raise ConfigError("gen-mesh needs --gen SPEC")
    g = parse_gen(cfg["gen"])
    mesh = generate_rect_mesh(g["bounds"], g["h"], jitter=g["jitter"], seed=g["seed"])
    out = Path(cfg["out"])
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "mesh.txt"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out)
    print(mesh.quality())
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "study": cmd_study, "diagnose": cmd_diagnose, "gen-mesh": cmd_gen_mesh}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps({k: cfg[k] for k in DEFAULTS}, indent=2, sort_keys=True))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except (ConfigError, MeshError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, InvalidWeightError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
