"""Command-line entry point.

Exit status: 0 on success, 1 when a solver fails, 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..adaptivity import estimate
from ..linalg import SolverError
from ..lsfem import solve_least_squares
from . import experiments as ex
from .config import ConfigError, load_config
from .io import export_csv, export_vtk, write_manifest

log = logging.getLogger("fosls")

COMMANDS = ("converge", "probe", "adapt", "decompose", "identities")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors count as configuration errors
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fosls", description="First-order system least-squares experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI file; command-line flags override its values")
    parser.add_argument("--problem")
    parser.add_argument("--formulation", choices=["L", "J", "M", "l", "j", "m"])
    parser.add_argument("--levels", help="e.g. 3-6 or 2,3,5")
    parser.add_argument("--theta", type=float)
    parser.add_argument("--max-dofs", type=int, dest="max_dofs")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--self-test", action="store_const", const=True, dest="self_test",
                        help="probe: replace the least-squares matrix by the Gram matrix")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _cell_flux_magnitude(fld) -> np.ndarray:
    s = fld.sigma_at(np.array([[1.0 / 3.0, 1.0 / 3.0]]))[:, 0, :]
    return np.linalg.norm(s, axis=1)


def _field_vtk(path, fld, eta_local):
    return export_vtk(
        fld.mesh, path, point_data={"u_h": fld.u}, cell_data={"eta": eta_local, "sigma_magnitude": _cell_flux_magnitude(fld)}
    )


def _run(cmd, cfg, out: Path) -> list[str]:
    summary: list[str] = []
    problem = cfg.make_problem()
    if cmd == "converge":
        rows = ex.run_convergence(cfg, problem)
        export_csv(rows, out / "convergence.csv")
        mesh = problem.make_mesh(max(cfg.levels))
        fld, _, _ = solve_least_squares(cfg.formulation, problem, mesh, tol=cfg.tol)
        _field_vtk(out / "solution.vtk", fld, estimate(fld, problem, cfg.formulation).eta_local)
        for r in rows:
            summary.append(
                f"level {r.level}: dofs {r.dofs} error {r.triple_norm_error:.4e} rate {r.rate:.3f} "
                f"effectivity {r.effectivity:.3f} quasi-best {r.quasi_best_ratio:.3f}"
            )
    elif cmd == "probe":
        res = ex.run_coercivity_probe(cfg, problem)
        export_csv(res.rows, out / "probe.csv")
        for r in res.rows:
            summary.append(f"level {r.level}: dofs {r.dofs} lambda_min {r.lambda_min:.6f} lambda_max {r.lambda_max:.6f}")
        summary.append(f"variation lambda_min {res.variation_min:.4f}, lambda_max {res.variation_max:.4f}")
    elif cmd == "adapt":
        rep = ex.run_adaptive(cfg, problem)
        export_csv(rep.adaptive, out / "adaptive.csv")
        export_csv(rep.uniform, out / "uniform.csv")
        _field_vtk(out / "adaptive_final.vtk", rep.final_field, rep.final_eta.eta_local)
        summary.append(f"adaptive iterations {len(rep.adaptive)}, final dofs {rep.adaptive[-1].dofs}")
        summary.append(f"decay exponent adaptive {rep.adaptive_exponent:.4f}, uniform {rep.uniform_exponent:.4f}")
        summary.append(f"estimator strictly decreasing: {rep.eta_strictly_decreasing}")
    elif cmd == "decompose":
        rows = ex.run_decomposition_check(cfg, problem)
        export_csv(rows, out / "decomposition.csv")
        worst = max(max(r.residual_first, r.residual_second) for r in rows)
        summary.append(f"{len(rows)} trials, worst identity residual {worst:.3e}")
    elif cmd == "identities":
        rows = ex.run_identities(cfg, problem)
        export_csv(rows, out / "identities.csv")
        for r in rows:
            summary.append(f"level {r.level} {r.check}: {r.value:.3e} ({'ok' if r.passed else 'VIOLATED'})")
    return summary


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = {k: getattr(args, k) for k in
                     ("problem", "formulation", "levels", "theta", "max_dofs", "tol", "seed", "out_dir", "self_test")}
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    log.info("running %s with %s", args.command, cfg)
    try:
        summary = _run(args.command, cfg, out)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    write_manifest(out / "manifest.txt", {"command": args.command, **cfg.as_dict()}, ["", "[summary]", *summary])
    print("\n".join(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
