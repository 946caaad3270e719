"""Built-in experiments, single-run orchestration and mesh-refinement studies."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import ControlMode, Field, PhysicsParams, ProjectionConfig, assemble_mass, assemble_stiffness
from .linalg import SolverConfig
from .mesh import BoundaryTag, build_structured_mesh, tag_boundary
from .observables import (
    control_error,
    cross_mesh_error,
    decay_rate_fit,
    stability_bounds,
)
from .stepper import ForcedProblem, RunConfig, RunResult, run
from .transport import ConvectConfig

PI = np.pi

NC = BoundaryTag.NEUMANN_CONTROL
NZ = BoundaryTag.NEUMANN_ZERO
DZ = BoundaryTag.DIRICHLET_ZERO


@dataclass(frozen=True)
class InitialCondition:
    name: str
    fn: object
    grad: object


INITIAL_CONDITIONS = {
    "bubble_minus3": InitialCondition(
        "x1(x1-1)x2(x2-1)-3",
        lambda x, y: x * (x - 1) * y * (y - 1) - 3.0,
        lambda x, y: ((2 * x - 1) * y * (y - 1), x * (x - 1) * (2 * y - 1)),
    ),
    "sinsin": InitialCondition(
        "sin(pi x1)sin(pi x2)",
        lambda x, y: np.sin(PI * x) * np.sin(PI * y),
        lambda x, y: (PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)),
    ),
    "coscos_minus5": InitialCondition(
        "cos(pi x1)cos(pi x2)-5",
        lambda x, y: np.cos(PI * x) * np.cos(PI * y) - 5.0,
        lambda x, y: (-PI * np.sin(PI * x) * np.cos(PI * y), -PI * np.cos(PI * x) * np.sin(PI * y)),
    ),
    "sinsin_plus_ramp": InitialCondition(
        "sin(pi x1)sin(pi x2)+0.2x1",
        lambda x, y: np.sin(PI * x) * np.sin(PI * y) + 0.2 * x,
        lambda x, y: (PI * np.cos(PI * x) * np.sin(PI * y) + 0.2, PI * np.sin(PI * x) * np.cos(PI * y)),
    ),
}

RAMP_STEADY_STATE = ForcedProblem(
    u_inf=lambda x, y: -0.2 * x,
    grad_u_inf=lambda x, y: (np.full_like(np.asarray(x, dtype=float), -0.2), np.zeros_like(np.asarray(y, dtype=float))),
    f_inf=lambda x, y: 0.04 * x,
    g_inf=lambda x, y, n1, n2: -0.2 * n1,
    name="u_inf=-0.2x1, f_inf=0.04x1, g_inf=-0.2n1",
)

ALL_CONTROL = {"left": NC, "right": NC, "bottom": NC, "top": NC}


@dataclass(frozen=True)
class Experiment:
    physics: PhysicsParams
    initial: str
    tags: dict
    modes: tuple
    T: float
    forcing: ForcedProblem | None = None


EXPERIMENTS = {
    "ex51": Experiment(PhysicsParams(nu=1.0, w_d=3.0, c0=1.0), "bubble_minus3", ALL_CONTROL,
                       (ControlMode.FEEDBACK, ControlMode.NONE), T=20.0),
    "ex52": Experiment(PhysicsParams(nu=0.05, w_d=0.0, c0=1.0), "sinsin", ALL_CONTROL,
                       (ControlMode.FEEDBACK, ControlMode.NONE), T=20.0),
    "ex53_case1": Experiment(PhysicsParams(nu=0.01, w_d=5.0, c0=10.0), "coscos_minus5",
                             {"left": NC, "right": DZ, "bottom": NC, "top": NC},
                             (ControlMode.FEEDBACK, ControlMode.NONE), T=10.0),
    "ex53_case2": Experiment(PhysicsParams(nu=0.01, w_d=5.0, c0=10.0), "coscos_minus5",
                             {"left": NC, "right": DZ, "bottom": NZ, "top": NZ},
                             (ControlMode.FEEDBACK, ControlMode.NONE), T=10.0),
    "ex54": Experiment(PhysicsParams(nu=0.1, w_d=0.0, c0=10.0), "sinsin_plus_ramp", ALL_CONTROL,
                       (ControlMode.LINEAR, ControlMode.NONE), T=10.0, forcing=RAMP_STEADY_STATE),
}
EXPERIMENTS["custom"] = EXPERIMENTS["ex51"]

OVERRIDE_KEYS = {"nu", "w_d", "c0", "initial", "initial_method", "solver", "rtol", "substeps", "convect_mode", "convect_rule", "lam"}


@dataclass
class ExperimentSpec:
    experiment: str = "ex51"
    modes: tuple | None = None
    n: int = 16
    k: float = 1e-3
    T: float | None = None
    overrides: dict = field(default_factory=dict)
    levels: tuple = (8, 16, 32)
    reference: int = 128
    t_eval: float = 1.0
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise KeyError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        unknown = set(self.overrides) - OVERRIDE_KEYS
        if unknown:
            raise ValueError(f"unknown overrides: {', '.join(sorted(unknown))}")
        if self.levels and any(self.reference <= n for n in self.levels):
            raise ValueError("reference level must be strictly finer than every study level")
        if self.levels and any(self.reference % n for n in self.levels):
            raise ValueError("reference subdivision must be a multiple of every study level")

    @property
    def base(self) -> Experiment:
        return EXPERIMENTS[self.experiment]

    def run_config(self, mode, T: float | None = None) -> RunConfig:
        base = self.base
        o = self.overrides
        physics = replace(base.physics, **{key: float(o[key]) for key in ("nu", "w_d", "c0") if key in o})
        ic = INITIAL_CONDITIONS[o.get("initial", base.initial)]
        return RunConfig(
            k=self.k,
            T=float(T if T is not None else (self.T if self.T is not None else base.T)),
            physics=physics,
            w0=ic.fn,
            w0_grad=ic.grad,
            mode=ControlMode(mode),
            initial_id=ic.name,
            initial_method=o.get("initial_method", "interpolate"),
            forcing=base.forcing,
            tag_rule=dict(base.tags),
            solver=SolverConfig(method=o.get("solver"), rtol=float(o.get("rtol", 1e-10))),
            convect=ConvectConfig(substeps=int(o.get("substeps", 1)), mode=o.get("convect_mode", "quadrature"),
                                  rule=o.get("convect_rule", "seven-point")),
            projection=ProjectionConfig(lam=float(o.get("lam", 1.0))),
        )


def _resolved_modes(spec: ExperimentSpec) -> tuple:
    return tuple(ControlMode(m) for m in (spec.modes or spec.base.modes))


def time_to_threshold(result: RunResult, fraction: float) -> float | None:
    """First recorded time with ``||W|| < fraction * ||W(0)||``."""
    l2 = np.asarray(result.series.l2)
    hit = np.nonzero(l2 < fraction * l2[0])[0]
    return float(result.series.t[hit[0]]) if len(hit) else None


@dataclass
class ExperimentOutput:
    results: dict
    files: list
    summary: dict


def run_experiment(spec: ExperimentSpec) -> ExperimentOutput:
    """Run every requested mode of one experiment; write CSVs and a summary when ``out_dir`` is set."""
    mesh = build_structured_mesh(spec.n)
    results, files, summary = {}, [], {"experiment": spec.experiment, "runs": {}}
    out = Path(spec.out_dir) if spec.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for mode in _resolved_modes(spec):
        cfg = spec.run_config(mode)
        res = run(cfg, mesh)
        results[mode.value] = res
        bounds = stability_bounds(cfg.physics)
        try:
            rate = decay_rate_fit(res.series)
        except ValueError:
            rate = None
        entry = {
            "config": res.config,
            "fitted_decay_rate": rate,
            "alpha_max": bounds.alpha_max,
            "C_F": bounds.C_F,
            "C_Lyp": bounds.C_Lyp,
            "initial_l2": res.series.l2[0],
            "final_l2": res.series.l2[-1],
            "final_h1semi": res.series.h1semi[-1],
            "final_ctrl_l2": res.series.ctrl_l2[-1],
            "time_to_10pct": time_to_threshold(res, 0.1),
        }
        summary["runs"][mode.value] = entry
        if out:
            path = out / f"{spec.experiment}_{mode.value}_n{spec.n}.csv"
            res.series.write_csv(path, {"experiment": spec.experiment, "config": json.dumps(res.config)})
            files.append(path)
    if out:
        path = out / f"{spec.experiment}_n{spec.n}_summary.txt"
        path.write_text(_format_summary(summary))
        files.append(path)
    return ExperimentOutput(results=results, files=files, summary=summary)


def _fmt(x) -> str:
    return "undefined" if x is None else f"{x:.6g}"


def _format_summary(summary: dict) -> str:
    lines = [f"experiment: {summary['experiment']}"]
    for mode, e in summary["runs"].items():
        lines.append(f"[{mode}]")
        lines.append(f"  fitted decay rate: {_fmt(e['fitted_decay_rate'])}")
        lines.append(f"  alpha_max: {_fmt(e['alpha_max'])}  (C_F={_fmt(e['C_F'])}, C_Lyp={_fmt(e['C_Lyp'])})")
        lines.append(f"  ||W(0)||: {_fmt(e['initial_l2'])}  ||W(T)||: {_fmt(e['final_l2'])}  "
                     f"|W(T)|_1: {_fmt(e['final_h1semi'])}  ||v2(T)||: {_fmt(e['final_ctrl_l2'])}")
        lines.append(f"  time to 10% of ||W(0)||: {_fmt(e['time_to_10pct'])}")
        lines.append(f"  config: {json.dumps(e['config'])}")
    return "\n".join(lines) + "\n"


def convergence_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float | None:
    """``log(e_c/e_f) / log(h_c/h_f)``: log2 of the error ratio for a halving; None when undefined."""
    if h_coarse == h_fine or e_coarse <= 0 or e_fine <= 0:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class ConvergenceRow:
    n: int
    h: float
    l2: float
    h1: float
    ctrl: float
    ctrl_max: float
    l2_rate: float | None = None
    h1_rate: float | None = None
    ctrl_rate: float | None = None
    ctrl_max_rate: float | None = None


@dataclass
class ConvergenceReport:
    rows: list
    metadata: dict

    def rates(self, name: str) -> list:
        return [getattr(r, f"{name}_rate") for r in self.rows[1:]]

    def to_text(self) -> str:
        head = f"{'h':>8} {'L2 err':>12} {'rate':>6} {'H1 err':>12} {'rate':>6} {'v2 err':>12} {'rate':>6} {'v2 max':>12} {'rate':>6}"
        out = [head]
        r6 = lambda x: f"{'-':>6}" if x is None else f"{x:6.2f}"
        for r in self.rows:
            out.append(f"{'1/' + str(r.n):>8} {r.l2:12.4e} {r6(r.l2_rate)} {r.h1:12.4e} {r6(r.h1_rate)} "
                       f"{r.ctrl:12.4e} {r6(r.ctrl_rate)} {r.ctrl_max:12.4e} {r6(r.ctrl_max_rate)}")
        return "\n".join(out)

    def write_csv(self, path) -> None:
        cols = ["h", "l2_err", "l2_rate", "h1_err", "h1_rate", "ctrl_err", "ctrl_rate", "ctrl_max_err", "ctrl_max_rate"]
        lines = [f"# {key}: {json.dumps(val)}" for key, val in self.metadata.items()]
        lines.append(",".join(cols))
        g = lambda x: "undefined" if x is None else f"{x:.17g}"
        for r in self.rows:
            lines.append(",".join(g(v) for v in (r.h, r.l2, r.l2_rate, r.h1, r.h1_rate, r.ctrl, r.ctrl_rate,
                                                   r.ctrl_max, r.ctrl_max_rate)))
        Path(path).write_text("\n".join(lines) + "\n")


class ConvergenceFailure(RuntimeError):
    def __init__(self, message: str, partial: ConvergenceReport):
        super().__init__(message)
        self.partial = partial


def _final_state(args):
    spec, n, T = args
    cfg = spec.run_config(ControlMode.FEEDBACK, T=T)
    return run(cfg, build_structured_mesh(n)).final.values


def run_convergence(spec: ExperimentSpec) -> ConvergenceReport:
    """Errors at ``t_eval`` of every study level against the reference level, with observed rates."""
    if not spec.levels:
        raise ValueError("convergence study needs at least one level")
    steps = spec.t_eval / spec.k
    if abs(steps - round(steps)) > 1e-9 * max(steps, 1):
        raise ValueError("t_eval must be a whole number of time steps")
    cfg = spec.run_config(ControlMode.FEEDBACK, T=spec.t_eval)
    metadata = {"experiment": spec.experiment, "k": spec.k, "t_eval": spec.t_eval, "levels": list(spec.levels),
                "reference": spec.reference, "config": cfg.describe()}
    ns = list(dict.fromkeys(list(spec.levels) + [spec.reference]))
    jobs = [(spec, n, spec.t_eval) for n in ns]
    finals = {}
    try:
        if spec.workers > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                for n, vals in zip(ns, pool.map(_final_state, jobs)):
                    finals[n] = vals
        else:
            for job in jobs:
                finals[job[1]] = _final_state(job)
    except Exception as exc:
        raise ConvergenceFailure(f"level run failed: {exc}", _report(spec, finals, metadata)) from exc
    return _report(spec, finals, metadata)


def _report(spec: ExperimentSpec, finals: dict, metadata: dict) -> ConvergenceReport:
    rows = []
    if spec.reference not in finals:
        return ConvergenceReport(rows, metadata)
    ref_cfg = spec.run_config(ControlMode.FEEDBACK, T=spec.t_eval)
    ref_mesh = build_structured_mesh(spec.reference)
    ref_mesh = tag_boundary(ref_mesh, ref_cfg.tag_rule)
    W_ref = Field(ref_mesh, finals[spec.reference])
    M, K = assemble_mass(ref_mesh), assemble_stiffness(ref_mesh)
    for n in spec.levels:
        if n not in finals:
            break
        mesh = tag_boundary(build_structured_mesh(n), ref_cfg.tag_rule)
        W = Field(mesh, finals[n])
        l2, h1 = cross_mesh_error(W, W_ref, M, K)
        row = ConvergenceRow(n=n, h=1.0 / n, l2=l2, h1=h1,
                             ctrl=control_error(W, W_ref, ref_cfg.physics, ControlMode.FEEDBACK),
                             ctrl_max=control_error(W, W_ref, ref_cfg.physics, ControlMode.FEEDBACK, norm="max"))
        if rows:
            p = rows[-1]
            row.l2_rate = convergence_rate(p.l2, row.l2, p.h, row.h)
            row.h1_rate = convergence_rate(p.h1, row.h1, p.h, row.h)
            row.ctrl_rate = convergence_rate(p.ctrl, row.ctrl, p.h, row.h)
            row.ctrl_max_rate = convergence_rate(p.ctrl_max, row.ctrl_max, p.h, row.h)
        rows.append(row)
    return ConvergenceReport(rows, metadata)
