import json

import numpy as np
import pytest

from burgers_feedback.harness import (
    EXPERIMENTS,
    ConvergenceReport,
    ExperimentSpec,
    convergence_rate,
    run_convergence,
    run_experiment,
)
from burgers_feedback.mesh import BoundaryTag
from burgers_feedback.observables import TimeSeries


def test_builtin_parameters():
    p = EXPERIMENTS["ex51"].physics
    assert (p.nu, p.w_d, p.c0) == (1.0, 3.0, 1.0)
    p = EXPERIMENTS["ex52"].physics
    assert (p.nu, p.w_d, p.c0) == (0.05, 0.0, 1.0)
    p = EXPERIMENTS["ex53_case1"].physics
    assert (p.nu, p.w_d, p.c0) == (0.01, 5.0, 10.0)
    assert EXPERIMENTS["ex53_case1"].tags["right"] is BoundaryTag.DIRICHLET_ZERO
    assert EXPERIMENTS["ex53_case2"].tags["top"] is BoundaryTag.NEUMANN_ZERO
    assert EXPERIMENTS["ex53_case2"].tags["left"] is BoundaryTag.NEUMANN_CONTROL
    assert EXPERIMENTS["ex54"].physics.c0 == 10.0


def test_spec_validation():
    with pytest.raises(KeyError):
        ExperimentSpec(experiment="ex99")
    with pytest.raises(ValueError):
        ExperimentSpec(overrides={"gamma": 1})
    with pytest.raises(ValueError):
        ExperimentSpec(levels=(8, 16), reference=16)
    with pytest.raises(ValueError):
        ExperimentSpec(levels=(8, 12), reference=32)


def test_overrides_reach_run_config():
    cfg = ExperimentSpec(overrides={"nu": 0.5, "c0": 2, "initial": "sinsin", "solver": "bicgstab",
                                    "substeps": 2, "convect_rule": "midpoint"}).run_config("feedback")
    assert cfg.physics.nu == 0.5 and cfg.physics.c0 == 2.0 and cfg.physics.w_d == 3.0
    assert cfg.solver.method == "bicgstab" and cfg.convect.substeps == 2 and cfg.convect.rule == "midpoint"
    assert cfg.initial_id.startswith("sin")
    assert cfg.T == 20.0


def test_convergence_rate():
    assert convergence_rate(4e-4, 1e-4, 0.5, 0.25) == pytest.approx(2.0)
    assert convergence_rate(1.0, 1.0, 0.25, 0.25) is None
    assert convergence_rate(0.0, 1.0, 0.5, 0.25) is None


def test_run_experiment_writes_outputs(tmp_path):
    spec = ExperimentSpec(experiment="ex51", n=4, k=1e-2, T=1.0, out_dir=str(tmp_path))
    out = run_experiment(spec)
    names = sorted(p.name for p in out.files)
    assert names == ["ex51_feedback_n4.csv", "ex51_n4_summary.txt", "ex51_none_n4.csv"]
    fb = TimeSeries.read_csv(tmp_path / "ex51_feedback_n4.csv")
    assert fb.n_steps == 100 and fb.l2[-1] < 0.1 * fb.l2[0]
    none = TimeSeries.read_csv(tmp_path / "ex51_none_n4.csv")
    assert min(none.l2) > 2.0
    header = (tmp_path / "ex51_feedback_n4.csv").read_text().splitlines()[1]
    meta = json.loads(header.split(": ", 1)[1])
    assert meta["nu"] == 1.0 and meta["mode"] == "feedback"
    summary = (tmp_path / "ex51_n4_summary.txt").read_text()
    assert "alpha_max: 0.5" in summary and "[none]" in summary
    assert out.summary["runs"]["feedback"]["alpha_max"] == 0.5


def test_small_convergence_study(tmp_path):
    spec = ExperimentSpec(experiment="ex51", k=0.01, levels=(2, 4, 8), reference=16, t_eval=0.1)
    rep = run_convergence(spec)
    assert isinstance(rep, ConvergenceReport)
    assert [r.n for r in rep.rows] == [2, 4, 8]
    assert rep.rows[0].l2_rate is None
    errs = [r.l2 for r in rep.rows]
    assert errs[0] > errs[1] > errs[2] > 0
    assert all(r is not None and r > 1.0 for r in rep.rates("l2"))
    rep.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("# experiment")
    assert "undefined" in lines[-3]  # first level has no rate
    assert "1/8" in rep.to_text()


def test_identical_levels_give_undefined_rate():
    spec = ExperimentSpec(experiment="ex51", k=0.05, levels=(4, 4), reference=8, t_eval=0.1)
    rep = run_convergence(spec)
    assert rep.rates("l2") == [None] and rep.rates("ctrl") == [None]
    assert "-" in rep.to_text().splitlines()[-1]


def test_convergence_needs_whole_steps():
    with pytest.raises(ValueError):
        run_convergence(ExperimentSpec(k=0.03, levels=(2,), reference=4, t_eval=0.1))


def test_parallel_levels_match_serial():
    kw = dict(experiment="ex52", k=0.02, levels=(2, 4), reference=8, t_eval=0.1)
    a = run_convergence(ExperimentSpec(**kw))
    b = run_convergence(ExperimentSpec(**kw, workers=2))
    assert np.allclose([r.l2 for r in a.rows], [r.l2 for r in b.rows], rtol=1e-12)
