"""Command-line entry point: ``cmfn solve | gradcheck | derivatives | ablate``.

Exit codes: 0 success, 1 usage error (bad flags, unknown problem, inapplicable
operation), 2 training failure (artifacts are still written).

Run directories default to ``$CMFN_RUNS_DIR/<problem>-seed<seed>`` (or
``runs/...`` when the variable is unset); ``--out`` overrides.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import autodiff as ad
from .evaluation import (VARIANTS, UnsupportedOperation, ablation_run, derivative_sweep, error_distribution,
                         problem_error, write_csv)
from .network import ConfigurationError, get_params, load_params, save_params
from .problems import PROBLEMS, UnknownProblem, get_problem
from .trainer import (TrainConfig, TrainingFailure, build_trial, collocation_for, loss, train,
                      train_config_for)

EXIT_OK, EXIT_USAGE, EXIT_TRAINING = 0, 1, 2
RUNS_ENV = "CMFN_RUNS_DIR"
GRADCHECK_THRESHOLD = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _add_problem_flags(p, training=True):
    p.add_argument("--problem", required=True, help=f"one of: {', '.join(PROBLEMS)}")
    p.add_argument("--nu", type=float, help="boundary-layer viscosity (default 0.5)")
    p.add_argument("--alpha", type=float, help="convection-diffusion amplitude (default 0.1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"run directory (default ${RUNS_ENV}/<problem>-seed<seed>)")
    if training:
        p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 20,20")
        p.add_argument("--points", type=int, help="uniform collocation points (1D problems)")
        p.add_argument("--grid", help="collocation mesh NXxNY (2D problems), e.g. 30x30")
        p.add_argument("--retries", type=int, default=3)
        p.add_argument("--max-iters", type=int, default=5000)
        p.add_argument("--scale-inputs", action="store_true", help="map network inputs to [-1, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmfn", description="Constrained feedforward-network ODE/PDE solver")
    parser.add_argument("--version", action="version", version=f"cmfn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="train a model and write a run directory")
    _add_problem_flags(p)
    p.add_argument("--config", help="TrainConfig JSON, or a report.json whose config is replayed")

    p = sub.add_parser("gradcheck", help="compare loss gradients with central differences")
    _add_problem_flags(p, training=False)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--hidden", default="5,5")

    p = sub.add_parser("derivatives", help="derivative sweep of a 1D solution against the closed form")
    _add_problem_flags(p)
    p.add_argument("--order", type=int, default=8)
    p.add_argument("--load", help="params.json to reuse instead of training")

    p = sub.add_parser("ablate", help="compare the default boundary term / weight with a variant")
    _add_problem_flags(p)
    p.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    p.add_argument("--seeds", default="1,2,3,4,5")
    return parser


def _problem_params(args) -> dict:
    return {k: v for k, v in (("nu", args.nu), ("alpha", args.alpha)) if v is not None}


def _config_from_args(args) -> TrainConfig:
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        return TrainConfig.from_dict(doc.get("config", doc))
    problem = get_problem(args.problem, **_problem_params(args))
    widths = None
    if args.hidden:
        try:
            hidden = [int(h) for h in args.hidden.split(",")]
        except ValueError:
            raise UsageError(f"--hidden must be comma-separated integers, got {args.hidden!r}") from None
        widths = (problem.dim, *hidden, 1)
    colloc = None
    if args.points is not None:
        colloc = f"uniform:{args.points}"
    if args.grid is not None:
        colloc = f"grid:{args.grid}"
    if colloc is not None:
        collocation_for(problem, colloc)  # validate early
    return train_config_for(args.problem, widths=widths, seed=args.seed, collocation=colloc,
                            retries=args.retries, scale_inputs=args.scale_inputs,
                            problem_params=_problem_params(args), max_iters=args.max_iters)


def _run_dir(args, problem: str, seed: int) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(RUNS_ENV, "runs")) / f"{problem}-seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args) -> int:
    started = _now()
    cfg = _config_from_args(args)
    problem = get_problem(cfg.problem, **cfg.problem_params)
    out = _run_dir(args, cfg.problem, cfg.seed)
    code = EXIT_OK
    try:
        trial, report = train(cfg)
    except TrainingFailure as exc:
        trial, report, code = exc.trial, exc.report, EXIT_TRAINING
        print(f"training failed: {exc}", file=sys.stderr)
    err = problem_error(trial, problem)
    header, table = error_distribution(trial, problem)
    coords = header[: problem.dim]
    sol_cols = coords + ["model", "bulk"] + (["reduced"] if "reduced" in header else [])
    write_csv(out / "solution.csv", sol_cols, table[:, [header.index(c) for c in sol_cols]])
    write_csv(out / "errors.csv", header, table)
    save_params(trial.net, out / "params.json")
    files = ["report.json", "params.json", "solution.csv", "errors.csv"]
    doc = {
        "tool": "cmfn",
        "version": __version__,
        "command": "solve",
        "config": cfg.to_dict(),
        "train": report.to_dict(),
        "error": err.to_dict(),
        "files": files,
        "started_at": started,
        "finished_at": _now(),
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"{problem.name}: loss {report.final_loss:.3e} after {report.iterations} iterations "
          f"({report.termination}); L2 error {err.l2_error:.3e}; wrote {out}")
    return code


def cmd_gradcheck(args) -> int:
    problem = get_problem(args.problem, **_problem_params(args))
    hidden = [int(h) for h in args.hidden.split(",")]
    trial = build_trial(problem, (problem.dim, *hidden, 1), args.seed)
    colloc = collocation_for(problem, "uniform:20" if problem.dim == 1 else "grid:5x5")
    worst = ad.gradcheck(lambda p: loss(trial, problem, colloc, p), get_params(trial.net), args.fd_step)
    ok = worst < GRADCHECK_THRESHOLD
    print(f"{problem.name}: max relative gradient error {worst:.3e} (fd step {args.fd_step:g})")
    if not ok:
        print(f"gradient check failed (threshold {GRADCHECK_THRESHOLD:g}); a coarse --fd-step adds "
              "truncation error to the finite differences, a tiny one adds rounding error", file=sys.stderr)
    return EXIT_OK if ok else EXIT_USAGE


def cmd_derivatives(args) -> int:
    if args.order < 1:
        raise UsageError("--order must be >= 1")
    problem = get_problem(args.problem, **_problem_params(args))
    if problem.dim != 1:
        raise UnsupportedOperation(f"derivative sweeps need a 1D problem; {problem.name} is {problem.dim}D")
    code = EXIT_OK
    if args.load:
        net = load_params(args.load)
        trial = build_trial(problem, net.widths, 0, net.activation, args.scale_inputs).with_net(net)
    else:
        cfg = _config_from_args(args)
        try:
            trial, _ = train(cfg)
        except TrainingFailure as exc:
            trial, code = exc.trial, EXIT_TRAINING
    sweep = derivative_sweep(trial, problem, args.order)
    out = _run_dir(args, problem.name, args.seed)
    write_csv(out / "derivatives.csv", sweep.header, sweep.rows())
    for k, rel, _ in sweep.rows():
        print(f"order {k}: relative L2 error {rel:.3e}")
    return code


def cmd_ablate(args) -> int:
    if VARIANTS.get(args.variant) != args.problem:
        raise UsageError(f"variant {args.variant!r} does not apply to {args.problem!r}; valid pairs: "
                         + ", ".join(f"--problem {p} --variant {v}" for v, p in VARIANTS.items()))
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    overrides = {"max_iters": args.max_iters}
    if args.hidden:
        overrides["widths"] = (1, *[int(h) for h in args.hidden.split(",")], 1)
    table = ablation_run(args.problem, args.variant, seeds, problem_params=_problem_params(args), **overrides)
    out = _run_dir(args, f"{args.problem}-{args.variant}", seeds[0])
    write_csv(out / "ablation.csv", table.header, table.rows())
    print(f"{args.problem} {args.variant}: median L2 error {table.median_baseline:.3e} (default) vs "
          f"{table.median_variant:.3e} (variant), ratio {table.ratio:.2f}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "gradcheck": cmd_gradcheck, "derivatives": cmd_derivatives, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.problem not in PROBLEMS:
            raise UnknownProblem(args.problem)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cmfn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnknownProblem, ConfigurationError, UnsupportedOperation) as exc:
        print(f"cmfn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
