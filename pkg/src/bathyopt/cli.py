"""Command-line entry point.

Examples::

    bathyopt optimize --preset damping --scale desk --out out/damping
    bathyopt solve --config run.json
    bathyopt convergence --preset damping --levels 16,32,64,128
    bathyopt gradcheck --preset inverse --directions 10 --step 1e-5
    bathyopt diagnostics --preset damping
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import drivers
from .config import PRESETS, RunConfig, build_problem, q_from_source
from .errors import BathyoptError
from .fem import discrete_tv
from .helmholtz import solve
from .io import emit_results, write_json
from .optim import minimize

log = logging.getLogger("bathyopt")

GRADCHECK_TOL = 1e-6


class CheckFailed(BathyoptError):
    code = "check-failed"


def _load_config(args, command: str) -> tuple[RunConfig, Path]:
    if args.config:
        cfg = RunConfig.load(args.config)
        base_dir = Path(args.config).resolve().parent
    elif args.preset:
        cfg = PRESETS[args.preset](args.scale)
        base_dir = Path.cwd()
    else:
        raise BathyoptError("either --config or --preset is required")
    cfg.command = command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    if getattr(args, "nx", None):
        cfg = cfg.with_mesh(args.nx)
    return cfg, base_dir


def _cmd_solve(cfg: RunConfig, args, base_dir) -> dict:
    prob = build_problem(cfg, base_dir)
    q = prob.control.initial_q if prob.control else q_from_source(prob.mesh, None)
    report = solve(prob.model, q)
    summary = {"command": "solve", "report": report.to_dict(timing=args.timings), "tv": discrete_tv(q)}
    emit_results(cfg.output_dir, report.state, q, summary, vtk=not args.no_vtk)
    return summary


def _cmd_optimize(cfg: RunConfig, args, base_dir) -> dict:
    prob = build_problem(cfg, base_dir)
    opts = dict(cfg.optimizer)
    if args.max_iter is not None:
        opts["max_iter"] = args.max_iter
    report = minimize(prob.model, prob.cost, prob.control, **opts)
    final = solve(prob.model, report.q_star)
    summary = {
        "command": "optimize",
        "optimizer": report.to_dict(),
        "state": final.to_dict(timing=args.timings),
    }
    if prob.q_reference is not None:
        summary["reconstruction"] = drivers.lobe_errors(prob, report.q_star)
    emit_results(
        cfg.output_dir,
        prob.model.observed(final.state),
        report.q_star,
        summary,
        history=report.history_rows(),
        vtk=not args.no_vtk,
    )
    return summary


def _cmd_convergence(cfg: RunConfig, args, base_dir) -> dict:
    levels = [int(v) for v in args.levels.split(",")]
    rows = drivers.run_convergence(cfg, levels)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["nx", "h", "dofs", "err_l2", "err_1k0", "rate_l2", "rate_1k0"]
    with open(out / "convergence.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r[c] is None else repr(r[c]) for c in cols) + "\n")
    summary = {"command": "convergence", "levels": levels, "table": rows}
    write_json(out / "summary.json", summary)
    return summary


def _cmd_gradcheck(cfg: RunConfig, args, base_dir) -> dict:
    rows = drivers.gradcheck(cfg, args.directions, args.step, args.threads)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gradcheck.csv", "w") as fh:
        fh.write("direction,adjoint,fd,rel_err\n")
        for r in rows:
            fh.write(f"{r['direction']},{r['adjoint']!r},{r['fd']!r},{r['rel_err']!r}\n")
    worst = max(r["rel_err"] for r in rows)
    summary = {"command": "gradcheck", "max_rel_err": worst, "tolerance": GRADCHECK_TOL, "pass": worst <= GRADCHECK_TOL}
    write_json(out / "summary.json", summary)
    if not summary["pass"]:
        raise CheckFailed(f"adjoint/FD mismatch {worst:.3e} > {GRADCHECK_TOL:g}")
    return summary


def _cmd_diagnostics(cfg: RunConfig, args, base_dir) -> dict:
    summary = {"command": "diagnostics", **drivers.diagnostics(cfg)}
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "summary.json", summary)
    failed = [k for k in ("garding_pass", "symmetry_pass", "scattered_pass") if not summary[k]]
    if failed:
        raise CheckFailed(f"diagnostics failed: {failed}")
    return summary


COMMANDS = {
    "solve": _cmd_solve,
    "optimize": _cmd_optimize,
    "convergence": _cmd_convergence,
    "gradcheck": _cmd_gradcheck,
    "diagnostics": _cmd_diagnostics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bathyopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--scale", choices=["paper", "desk"], default="desk")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--nx", type=int, help="override the mesh resolution")
    common.add_argument("--timings", action="store_true", help="include wall times in summaries")
    common.add_argument("--no-vtk", action="store_true")

    sub.add_parser("solve", parents=[common])
    p = sub.add_parser("optimize", parents=[common])
    p.add_argument("--max-iter", type=int)
    p = sub.add_parser("convergence", parents=[common])
    p.add_argument("--levels", default="16,32,64,128")
    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--step", type=float, default=1e-5)
    sub.add_parser("diagnostics", parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg, base_dir = _load_config(args, args.command)
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        cfg.dump(Path(cfg.output_dir) / "config.json")
        summary = COMMANDS[args.command](cfg, args, base_dir)
    except BathyoptError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io-failure", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
