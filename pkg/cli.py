"""
Command-line front end.

    python cli.py integrand-table --config problems/bar.json
    python cli.py compliance --config problems/bar.json
    python cli.py solve-mk --config problems/bar.json [--truss|--grid] [--scalar]
    python cli.py gamma-sweep --config problems/bar_sweep.json
    python cli.py probe seppecher|conj2|conj3|gap --config problems/....json
    python cli.py compare runs/a runs/b
"""

import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

import settings
from artifacts import RunDirectory, cell_rows, read_manifest
from compliance import compliance_c, compliance_E
from errors import ComparisonError, ConfigError, InputError, VanishingMassError
from integrands import GaugeTable, integrand_row
from log_utils import Colors, configure_logging, get_logger, print_banner
from mk_solver import MKOptions, MKSolution, optimal_mass_value, solve_mk_grid, solve_mk_truss
from models import (ProblemSpec, RunConfig, build_domain, build_law, build_measure, load_problem,
                    resolved_dict, young_from_spec)
from probes import (conj2_check, conj3_verify, gamma_upper_sweep, gap_probe, ordered_map,
                    random_conj3_instance, seppecher_field, weight_near, young_extract)
from tensor_core import eigh_batch

logger = get_logger(__name__)

EXIT_CODES = """
exit codes:
  0  success
  1  unexpected error
  2  usage error
  3  invalid arguments, problem file or configuration
  4  infeasible problem (unsupported load, stranded node, empty ground structure)
  5  solver did not converge (best primal/dual pair in the error JSON)
  6  unresolved microstructure (grid too coarse)
  7  inconsistency between independent evaluations
  8  runs cannot be compared
"""


def _options(config: RunConfig, problem: ProblemSpec) -> MKOptions:
    return MKOptions(tol=config.tol or settings.MK_TOL, gauge=problem.mk.gauge,
                     check_every=problem.mk.check_every, seed=config.seed)


# === Commands ===


def cmd_integrand_table(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    problem = config.problem
    law = build_law(problem)
    rows = [integrand_row(law, lam, problem.integrand_table.gauge) for lam in problem.integrand_table.eigenvalues]
    out.write_csv("integrands", rows)
    return {"rows": len(rows), "gamma": law.gamma, "gauge": problem.integrand_table.gauge}


def cmd_compliance(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    problem = config.problem
    law = build_law(problem)
    dom = build_domain(problem, config.resolution, config.scalar)
    measure = build_measure(problem.measure, dom)
    if problem.compliance.kind == "c":
        report = compliance_c(dom, measure, law)
    else:
        report = compliance_E(dom, measure, law, k=problem.compliance.k, tol=config.tol or settings.DEFAULT_TOL)
    out.write_csv("compliance", [report.to_row()])
    out.write_vtk("density", dom, {"density": measure.cell_weights})
    summary = report.to_row()
    summary.update({"finite": report.finite, "diagnosis": report.diagnosis, "floor_values": report.floor_values})
    return summary


def _principal_rows(sol: MKSolution) -> List[Dict[str, Any]]:
    dom = sol.dom
    lam = sol.lam.cells
    if dom.scalar:
        return cell_rows(dom, {f"flux_{'xyz'[a]}": lam[:, a] for a in range(dom.dim)})
    vals, frames = eigh_batch(lam)
    cols: Dict[str, np.ndarray] = {f"s{i + 1}": vals[:, i] for i in range(dom.dim)}
    cols.update({f"d1{'xyz'[a]}": frames[:, a, 0] for a in range(dom.dim)})
    return cell_rows(dom, cols)


def _bar_rows(sol: MKSolution) -> List[Dict[str, Any]]:
    dom, graph = sol.dom, sol.graph
    coords = dom.node_coords
    names = "xyz"[:dom.dim]
    keep = np.flatnonzero(np.abs(sol.lam.bars) > 0)
    rows = []
    mass = np.abs(sol.lam.bars) * graph.lengths
    total = mass.sum()
    for b in keep:
        i, j = graph.bars[b]
        row: Dict[str, Any] = {"bar": int(b)}
        row.update({f"{names[a]}0": float(coords[i, a]) for a in range(dom.dim)})
        row.update({f"{names[a]}1": float(coords[j, a]) for a in range(dom.dim)})
        row["force"] = float(sol.lam.bars[b])
        row["mass"] = float(mass[b] / total) if total > 0 else 0.0
        rows.append(row)
    return rows


def cmd_solve_mk(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    problem = config.problem
    law = build_law(problem)
    dom = build_domain(problem, config.resolution, config.scalar)
    opts = _options(config, problem)
    if config.method == "truss":
        sol = solve_mk_truss(dom, law, problem.truss.radius_cells * dom.h, opts)
    else:
        sol = solve_mk_grid(dom, law, opts)
    summary = sol.summary()
    out.write_json("solution.json", summary)
    if sol.method == "truss":
        out.write_csv("bars", _bar_rows(sol),
                      columns=["bar"] + [f"{c}{e}" for e in "01" for c in "xyz"[:dom.dim]] + ["force", "mass"])
    else:
        rho0 = (np.linalg.norm(sol.lam.cells, axis=-1) if dom.scalar
                else GaugeTable(law, sol.gauge).rho0(sol.lam.cells))
        out.write_csv("mu", cell_rows(dom, {"density": sol.mu_opt.cell_weights, "rho0_lambda": rho0}))
        out.write_csv("lambda", _principal_rows(sol))
        out.write_vtk("fields", dom, {"density": sol.mu_opt.cell_weights, "stress": sol.lam.cells})
    summary["optimal_mass_value"] = optimal_mass_value(sol, cross_tol=problem.mk.cross_tol)
    return summary


def cmd_gamma_sweep(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    problem = config.problem
    if problem.sweep is None:
        raise ConfigError("gamma-sweep needs a 'sweep' block")
    law = build_law(problem)
    dom = build_domain(problem, config.resolution, config.scalar)
    target = build_measure(problem.sweep.target, dom)
    report = gamma_upper_sweep(dom, target, problem.sweep.eps, law, workers=config.workers)
    out.write_csv("sweep", report.rows())
    return {"c_target": report.c_target, "E_target": report.E_target, "limsup_estimate": report.limsup_estimate,
            "eps": list(report.eps), "c_eps": report.c_eps}


def _probe_seppecher(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    spec = config.problem.seppecher
    ladder = sorted(spec.eps, reverse=True)
    resolution = config.resolution or spec.resolution
    fields = ordered_map(lambda eps: seppecher_field(eps, resolution, spec.periods), ladder, config.workers)
    rows = []
    for f in fields:
        info = f.summary()
        dx, dmu = info["lebesgue_average"], info["measure_average"]
        rows.append({"eps": f.eps, "radius": f.radius, "cells_per_period": info["cells_per_period"],
                     "weighted_energy": info["weighted_energy"],
                     "div_constant": info["divergence"]["constant_regions"],
                     "div_annulus": info["divergence"]["annulus"],
                     "div_interfaces": info["divergence"]["interfaces"],
                     "mean_dx_11": dx[0][0], "mean_dx_22": dx[1][1], "mean_dx_12": dx[0][1],
                     "mean_dmu_11": dmu[0][0], "mean_dmu_22": dmu[1][1], "mean_dmu_12": dmu[0][1]})
    out.write_csv("seppecher", rows)
    summary: Dict[str, Any] = {"eps": ladder, "fields": rows}
    if len(fields) >= 3:
        fits = young_extract([f.snapshot() for f in fields])
        young_rows = []
        for fit in fits:
            row = fit.row()
            row["weight_at_identity"] = 0.0 if fit.measure is None else weight_near(fit.measure, np.eye(2), 1e-6)
            young_rows.append(row)
        out.write_csv("young", young_rows)
        summary["weight_at_identity"] = young_rows[-1]["weight_at_identity"]
    finest = fields[-1]
    out.write_vtk("seppecher_finest", finest.dom, {"density": finest.measure.cell_weights,
                                                   "stress": finest.stress.cells})
    return summary


def _probe_conj2(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    if config.problem.conj2 is None:
        raise ConfigError("probe conj2 needs a 'conj2' Young measure")
    law = build_law(config.problem)
    nu = young_from_spec(config.problem.conj2)
    result = conj2_check(nu, law)
    out.write_csv("conj2", [result.to_dict()],
                  docs={"lhs": "∫ j* dν", "rhs": "(j̄)* of the barycentre", "satisfied": "lhs ≥ rhs − 1e-9"})
    return {**result.to_dict(), "measure": nu.to_dict()}


def _probe_conj3(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    law = build_law(config.problem)
    spec = config.problem.conj3
    if spec is not None:
        instances = [(young_from_spec(spec.nu0), [young_from_spec(k) for k in spec.kernels])]
    else:
        rng = np.random.default_rng(config.seed)
        instances = [random_conj3_instance(law, rng) for _ in range(100)]
    rows = []
    for i, (nu0, kernels) in enumerate(instances):
        report = conj3_verify(nu0, kernels, law)
        rows.append({"instance": i, "int_j_star_nu": report.int_j_star_nu, "int_j_star_nu0": report.int_j_star_nu0,
                     "int_j_bar_star_nu0": report.int_j_bar_star_nu0, "j_bar_star_mean": report.j_bar_star_mean,
                     "satisfied": report.conj2.satisfied})
    out.write_csv("conj3", rows, docs={
        "instance": "instance index", "int_j_star_nu": "∫ j* dν for the composed ν",
        "int_j_star_nu0": "∫ j* dν₀", "int_j_bar_star_nu0": "∫ (j̄)* dν₀",
        "j_bar_star_mean": "(j̄)* of the barycentre", "satisfied": "conj2 inequality on the composed ν"})
    return {"instances": len(rows), "failures": sum(not r["satisfied"] for r in rows)}


def _probe_gap(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    problem = config.problem
    if problem.gap is None:
        raise ConfigError("probe gap needs a 'gap' block")
    law = build_law(problem)
    dom = build_domain(problem, config.resolution, config.scalar)
    report = gap_probe(dom, problem.gap.eps, law, _options(config, problem),
                       exchange_rounds=problem.gap.exchange_rounds, workers=config.workers)
    out.write_csv("gap", report.rows())
    return {"label": report.label, "c_inf": report.c_inf, "I": report.I_value, "gaps": report.gaps}


PROBES: Dict[str, Callable[[RunConfig, RunDirectory], Dict[str, Any]]] = {
    "seppecher": _probe_seppecher,
    "conj2": _probe_conj2,
    "conj3": _probe_conj3,
    "gap": _probe_gap,
}


def cmd_probe(config: RunConfig, out: RunDirectory) -> Dict[str, Any]:
    if config.probe not in PROBES:
        raise InputError(f"unknown probe {config.probe!r}")
    return PROBES[config.probe](config, out)


COMMANDS: Dict[str, Callable[[RunConfig, RunDirectory], Dict[str, Any]]] = {
    "integrand-table": cmd_integrand_table,
    "compliance": cmd_compliance,
    "solve-mk": cmd_solve_mk,
    "gamma-sweep": cmd_gamma_sweep,
    "probe": cmd_probe,
}


def run_name(config: RunConfig) -> str:
    parts = [config.problem.name, config.command]
    if config.probe:
        parts.append(config.probe)
    if config.command == "solve-mk":
        parts.append(config.method)
    return "-".join(parts)


def run(config: RunConfig) -> Tuple[int, RunDirectory]:
    """Execute one run; artifacts and manifest are written even when the run fails"""
    out = RunDirectory(config.out_dir, run_name(config))
    resolved = resolved_dict(config)
    try:
        summary = COMMANDS[config.command](config, out)
    except VanishingMassError as exc:
        logger.error("run_failed", kind=exc.kind, message=exc.message)
        out.write_json("error.json", exc.to_dict())
        out.write_manifest(resolved, {}, status=exc.kind)
        return exc.exit_code, out
    out.write_json("summary.json", summary)
    out.write_manifest(resolved, summary)
    logger.info("run_done", command=config.command, path=str(out.path))
    return 0, out


# === compare ===


def _numeric_items(summary: Dict[str, Any], prefix: str = "") -> Dict[str, float]:
    items: Dict[str, float] = {}
    for key, value in summary.items():
        name = f"{prefix}{key}"
        if isinstance(value, bool):
            continue
        if isinstance(value, (int, float)):
            items[name] = float(value)
        elif isinstance(value, dict):
            items.update(_numeric_items(value, f"{name}."))
    return items


def compare(run_a: str, run_b: str) -> List[Dict[str, Any]]:
    """Relative deltas between the numeric summaries of two runs"""
    a, b = read_manifest(run_a), read_manifest(run_b)
    pa, pb = a["config"]["problem"], b["config"]["problem"]
    if pa["law"] != pb["law"]:
        raise ComparisonError("runs use different laws", {"a": pa["law"], "b": pb["law"]})
    geometry = ("clamp", "loads")
    dom_a = {k: v for k, v in (pa.get("domain") or {}).items() if k != "resolution"}
    dom_b = {k: v for k, v in (pb.get("domain") or {}).items() if k != "resolution"}
    if dom_a != dom_b or any(pa.get(k) != pb.get(k) for k in geometry):
        raise ComparisonError("runs have different problem geometry")
    if a["config"]["command"] != b["config"]["command"]:
        raise ComparisonError("runs come from different commands")
    va, vb = _numeric_items(a.get("summary", {})), _numeric_items(b.get("summary", {}))
    rows = []
    for key in sorted(set(va) & set(vb)):
        delta = vb[key] - va[key]
        scale = max(abs(va[key]), abs(vb[key]))
        rows.append({"quantity": key, "a": va[key], "b": vb[key], "abs_delta": abs(delta),
                     "rel_delta": abs(delta) / scale if scale > 0 else 0.0})
    return rows


# === argument parsing ===


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Problem file (JSON)")
    p.add_argument("--out", default=settings.OUTPUT_DIR, help=f"Output root (default: {settings.OUTPUT_DIR})")
    p.add_argument("--tol", type=float, help="Solver tolerance (relative gap)")
    p.add_argument("--resolution", type=int, help="Cells per unit length (per period for seppecher)")
    p.add_argument("--seed", type=int, default=settings.SEED, help="Random seed")
    p.add_argument("--workers", type=int, default=settings.WORKERS, help="Worker threads for ladders")
    p.add_argument("--log-level", default=settings.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    p.add_argument("--log-format", default=settings.LOG_FORMAT, choices=["console", "json"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vmass",
        description="Vanishing-mass relaxation toolkit: compliance, Michell problems and limit probes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py integrand-table --config problems/bar.json
  python cli.py solve-mk --config problems/bar.json --resolution 64
  python cli.py solve-mk --config problems/bar.json --truss
  python cli.py probe seppecher --config problems/seppecher.json
  python cli.py compare runs/bar-solve-mk-grid runs/bar-solve-mk-truss
""" + EXIT_CODES,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("integrand-table", "Tabulate j, j_k, j̄, ρ, ρ⁰ on eigenvalue rows"),
                       ("compliance", "Compliance c or relaxed compliance E of a measure"),
                       ("gamma-sweep", "Fatten a truss target along an ε ladder")):
        _common(sub.add_parser(name, help=text))

    mk = sub.add_parser("solve-mk", help="Monge–Kantorovich problem: I(F,Ω,Σ) and the optimal density")
    _common(mk)
    method = mk.add_mutually_exclusive_group()
    method.add_argument("--truss", dest="method", action="store_const", const="truss", help="Ground-structure LP")
    method.add_argument("--grid", dest="method", action="store_const", const="grid", help="Grid primal-dual (default)")
    mk.add_argument("--scalar", action="store_true", help="Scalar (conduction / Beckmann) mode")
    mk.set_defaults(method="grid")

    probe = sub.add_parser("probe", help="Limit experiments")
    probe.add_argument("probe", choices=sorted(PROBES))
    _common(probe)
    probe.add_argument("--scalar", action="store_true", help="Scalar mode (gap probe)")

    cmp = sub.add_parser("compare", help="Tabulate value differences between two runs")
    cmp.add_argument("run_a")
    cmp.add_argument("run_b")
    cmp.add_argument("--out", help="Directory for compare.csv (default: print only)")
    cmp.add_argument("--tolerance", type=float, help="Fail with exit code 8 above this relative delta")
    cmp.add_argument("--log-level", default=settings.LOG_LEVEL)
    cmp.add_argument("--log-format", default=settings.LOG_FORMAT, choices=["console", "json"])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config:
        problem = load_problem(args.config)
    elif args.command == "integrand-table" or getattr(args, "probe", None) in ("seppecher", "conj3"):
        problem = ProblemSpec.model_validate({"law": {"dim": 2, "gamma": 1.0}})
    else:
        raise ConfigError(f"{args.command} needs --config")
    try:
        return RunConfig(command=args.command, problem_path=args.config, problem=problem, out_dir=args.out,
                         tol=args.tol, resolution=args.resolution, seed=args.seed, workers=args.workers,
                         method=getattr(args, "method", None) or "grid", scalar=getattr(args, "scalar", False),
                         probe=getattr(args, "probe", None))
    except ValidationError as exc:
        raise ConfigError("invalid command-line options",
                          {"errors": json.loads(exc.json(include_url=False))}) from exc


def _print_error(exc: VanishingMassError) -> None:
    print(f"{Colors.RED}[{exc.kind}]{Colors.END} {exc.message}", file=sys.stderr)
    print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    try:
        if args.command == "compare":
            rows = compare(args.run_a, args.run_b)
            if args.out:
                out = RunDirectory(args.out, "compare")
                out.write_csv("compare", rows, columns=["quantity", "a", "b", "abs_delta", "rel_delta"])
            for row in rows:
                print(f"{row['quantity']:<32} {row['a']:>14.6g} {row['b']:>14.6g} {row['rel_delta']:>10.3e}")
            worst = max((r["rel_delta"] for r in rows), default=0.0)
            if args.tolerance is not None and worst > args.tolerance:
                raise ComparisonError(f"largest relative delta {worst:.3e} exceeds {args.tolerance:.3e}",
                                      {"largest": worst})
            return 0
        config = config_from_args(args)
        print_banner(f"{settings.APP_NAME.upper()} - {run_name(config)}")
        code, out = run(config)
        if code == 0:
            print(f"{Colors.GREEN}[done]{Colors.END} {out.path}", file=sys.stderr)
        else:
            _print_error_file(out)
        return code
    except VanishingMassError as exc:
        _print_error(exc)
        return exc.exit_code
    except KeyboardInterrupt:
        print(f"{Colors.YELLOW}[interrupted]{Colors.END}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to the generic exit code
        logger.exception("unexpected_error")
        print(json.dumps({"error": "unexpected", "message": str(exc), "exit_code": 1}), file=sys.stderr)
        return 1


def _print_error_file(out: RunDirectory) -> None:
    path = out.path / "error.json"
    if path.exists():
        print(f"{Colors.RED}[failed]{Colors.END} {path.read_text(encoding='utf-8').strip()}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
