"""Command-line entry point: ``burgers run`` and ``burgers converge``.

Every flag can also come from an INI file passed with ``--config``; keys are
the flag names (dashes or underscores) in a ``[run]``/``[converge]`` section or
a shared ``[burgers]`` section. Flags given on the command line win.

Exit codes: 0 success, 2 usage error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .harness import EXPERIMENTS, INITIAL_CONDITIONS, ConvergenceFailure, ExperimentSpec, run_convergence, run_experiment
from .linalg import BICGSTAB, DIRECT_LU, SolverFailure
from .transport import NODAL, QUADRATURE, RULES

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3

MODES = ("feedback", "linear", "none")
STUDY_DEFAULTS = {"k": 1e-4, "levels": (4, 8, 16, 32, 64), "ref": 128}
FAST_DEFAULTS = {"k": 1e-3, "levels": (8, 16, 32), "ref": 128}


class UsageError(Exception):
    pass


def _levels(text: str) -> tuple:
    try:
        levels = tuple(int(tok) for tok in str(text).replace(" ", "").split(",") if tok)
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}") from None
    if not levels or min(levels) < 1:
        raise argparse.ArgumentTypeError("levels must be positive integers")
    return levels


def _modes(text: str) -> tuple:
    modes = tuple(tok.strip() for tok in str(text).split(",") if tok.strip())
    bad = [m for m in modes if m not in MODES]
    if not modes or bad:
        raise argparse.ArgumentTypeError(f"modes must be drawn from {', '.join(MODES)}, got {text!r}")
    return modes


def _positive_float(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _add_physics(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("physics and numerics overrides")
    g.add_argument("--nu", type=_positive_float, help="viscosity")
    g.add_argument("--w-d", type=float, help="constant steady state w_d >= 0")
    g.add_argument("--c0", type=_positive_float, help="feedback gain c0")
    g.add_argument("--initial", choices=sorted(INITIAL_CONDITIONS), help="initial condition id")
    g.add_argument("--initial-method", choices=("interpolate", "h1"), help="how initial data enter V_h")
    g.add_argument("--solver", choices=(DIRECT_LU, BICGSTAB), help="linear solver (default: by size)")
    g.add_argument("--rtol", type=_positive_float, help="linear solver relative tolerance")
    g.add_argument("--substeps", type=int, help="explicit Euler sub-steps per characteristic")
    g.add_argument("--convect-mode", choices=(QUADRATURE, NODAL), help="convected load evaluation")
    g.add_argument("--convect-rule", choices=sorted(RULES), help="area rule for the convected load")
    g.add_argument("--lam", type=float, help="shift of the H1 projection of initial data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="burgers", description="Boundary feedback stabilization of 2D viscous Burgers")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment in one or more control modes")
    r.add_argument("--config", help="INI file with default values for any flag")
    r.add_argument("--experiment", default="ex51", choices=sorted(EXPERIMENTS))
    r.add_argument("--mode", type=_modes,
                   help="control mode(s), comma-separated: feedback, linear, none (default: the experiment's)")
    r.add_argument("--n", type=int, default=16, help="cells per side")
    r.add_argument("--k", type=_positive_float, default=1e-3, help="time step")
    r.add_argument("--T", type=_positive_float, help="final time (default: experiment's)")
    r.add_argument("--out", default="out", help="output directory")
    _add_physics(r)

    c = sub.add_parser("converge", help="mesh-refinement study against a fine reference")
    c.add_argument("--config", help="INI file with default values for any flag")
    c.add_argument("--experiment", default="ex51", choices=sorted(EXPERIMENTS))
    c.add_argument("--levels", type=_levels, help="comma-separated cells per side (default 4,8,16,32,64)")
    c.add_argument("--ref", type=int, help="reference cells per side (default 128)")
    c.add_argument("--k", type=_positive_float, help="time step (default 1e-4)")
    c.add_argument("--t-eval", type=_positive_float, default=1.0, help="time at which errors are measured")
    c.add_argument("--workers", type=int, default=1, help="parallel level runs")
    c.add_argument("--fast", action="store_true",
                   help="quick study: k=1e-3, levels 8,16,32, reference 128 (explicit flags still win)")
    c.add_argument("--out", default="out", help="output directory")
    _add_physics(c)
    return parser


def _config_values(path: str, section: str) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep "T" distinct from "t"
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path!r}")
    values = {}
    for name in ("burgers", section):
        if cp.has_section(name):
            values.update({key.replace("-", "_"): val for key, val in cp.items(name)})
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = set(values) - set(actions)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = {}
    for dest, raw in values.items():
        act = actions[dest]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                val = configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
            else:
                val = act.type(raw) if act.type else raw
        except (KeyError, ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"bad value for config key {dest!r}: {raw!r} ({exc})") from None
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config key {dest!r}: {raw!r} not in {sorted(act.choices)}")
        defaults[dest] = val
    sub.set_defaults(**defaults)


def _overrides(args) -> dict:
    keys = ("nu", "w_d", "c0", "initial", "initial_method", "solver", "rtol", "substeps",
            "convect_mode", "convect_rule", "lam")
    return {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}


def _parse(argv: list) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, _config_values(args.config, args.command))
        args = parser.parse_args(argv)
    if args.command == "converge":
        defaults = FAST_DEFAULTS if args.fast else STUDY_DEFAULTS
        for key, val in defaults.items():
            if getattr(args, key) is None:
                setattr(args, key, val)
    return args


def _cmd_run(args) -> None:
    spec = ExperimentSpec(experiment=args.experiment, modes=args.mode, n=args.n,
                          k=args.k, T=args.T, overrides=_overrides(args), levels=(), out_dir=args.out)
    out = run_experiment(spec)
    for mode, entry in out.summary["runs"].items():
        rate = entry["fitted_decay_rate"]
        print(f"{args.experiment} [{mode}] ||W(0)||={entry['initial_l2']:.6g} ||W(T)||={entry['final_l2']:.6g} "
              f"fitted rate={'undefined' if rate is None else f'{rate:.4g}'} alpha_max={entry['alpha_max']:.4g}")
    for path in out.files:
        print(f"wrote {path}")


def _cmd_converge(args) -> None:
    spec = ExperimentSpec(experiment=args.experiment, k=args.k, overrides=_overrides(args), levels=args.levels,
                          reference=args.ref, t_eval=args.t_eval, out_dir=args.out, workers=args.workers)
    report = run_convergence(spec)
    print(report.to_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.experiment}_convergence_ref{args.ref}"
    report.write_csv(out / f"{stem}.csv")
    (out / f"{stem}.txt").write_text(report.to_text() + "\n")
    print(f"wrote {out / (stem + '.csv')}")


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"burgers: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            _cmd_run(args)
        else:
            _cmd_converge(args)
    except (SolverFailure, ConvergenceFailure) as exc:
        if isinstance(exc, ConvergenceFailure) and not isinstance(exc.__cause__, SolverFailure):
            print(f"burgers: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"burgers: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError) as exc:
        print(f"burgers: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
