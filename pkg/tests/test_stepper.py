import math

import numpy as np
import pytest

from burgers_feedback.assembly import ControlMode, Field, PhysicsParams, interpolate
from burgers_feedback.harness import EXPERIMENTS, INITIAL_CONDITIONS, RAMP_STEADY_STATE, ExperimentSpec
from burgers_feedback.linalg import SolverConfig
from burgers_feedback.mesh import BoundaryTag, build_structured_mesh
from burgers_feedback.observables import stability_bounds
from burgers_feedback.stepper import ForcedProblem, RunConfig, StepFailure, Stepper, build_step_matrix, run, step

EX51 = PhysicsParams(nu=1.0, w_d=3.0, c0=1.0)
BUBBLE = INITIAL_CONDITIONS["bubble_minus3"]


def _cfg(**kw):
    base = dict(k=1e-3, T=0.01, physics=EX51, w0=BUBBLE.fn, w0_grad=BUBBLE.grad)
    base.update(kw)
    return RunConfig(**base)


def test_run_config_validation():
    with pytest.raises(ValueError):
        _cfg(k=1.0)
    with pytest.raises(ValueError):
        _cfg(k=0.0)
    with pytest.raises(ValueError):
        _cfg(T=1e-4)
    with pytest.raises(ValueError):
        _cfg(initial_method="h1", w0_grad=None)
    with pytest.raises(ValueError):
        _cfg(mode="robin")
    assert _cfg(T=1.0).num_steps == 1000


def test_first_step_decreases_norm():
    res = run(_cfg(T=1e-3), build_structured_mesh(4))
    assert res.series.n_steps == 1
    assert res.series.l2[1] < res.series.l2[0]


@pytest.mark.parametrize("mode", list(ControlMode))
def test_zero_state_is_preserved(mode):
    mesh = build_structured_mesh(6)
    res = run(_cfg(mode=mode, T=0.1), mesh, W0=Field.zeros(mesh))
    assert np.abs(res.final.values).max() <= 1e-13


def test_forced_steady_state_is_preserved():
    spec = ExperimentSpec(experiment="ex54", n=6, k=1e-2)
    mesh = build_structured_mesh(6)
    for mode in ("linear", "none"):
        res = run(spec.run_config(mode, T=0.5), mesh, W0=Field.zeros(mesh))
        assert np.abs(res.final.values).max() <= 1e-12


def test_shift_consistency_with_constant_forcing():
    # constant target w_d=3 equals the forced problem with u_inf = 3
    mesh = build_structured_mesh(6)
    const = ForcedProblem(u_inf=lambda x, y: 3.0 + 0 * x, grad_u_inf=lambda x, y: (0 * x, 0 * y), name="three")
    a = run(_cfg(T=0.05), mesh)
    b = run(_cfg(T=0.05, forcing=const), mesh)
    assert np.allclose(a.final.values, b.final.values, atol=1e-12, rtol=0)


def test_energy_non_increasing_feedback():
    res = run(_cfg(T=1.0), build_structured_mesh(8))
    e = res.series.energy
    assert len(e) == 1001
    assert np.all(np.diff(e) <= 1e-14)


@pytest.mark.parametrize("experiment,n,T", [("ex51", 16, 5.0), ("ex52", 16, 5.0)])
def test_discrete_decay_bound(experiment, n, T):
    spec = ExperimentSpec(experiment=experiment, n=n, k=1e-3)
    cfg = spec.run_config(ControlMode.FEEDBACK, T=T)
    res = run(cfg, build_structured_mesh(n))
    alpha = stability_bounds(cfg.physics).alpha_max
    t, l2 = np.asarray(res.series.t), np.asarray(res.series.l2)
    assert np.all(l2 <= l2[0] * np.exp(-alpha * t) * 1.05)


def test_dirichlet_nodes_stay_zero():
    spec = ExperimentSpec(experiment="ex53_case1", n=8, k=1e-2)
    res = run(spec.run_config("feedback", T=0.1), build_structured_mesh(8))
    right = res.final.mesh.nodes_with_tag(BoundaryTag.DIRICHLET_ZERO)
    assert len(right) == 9 and np.all(res.final.values[right] == 0.0)


def test_step_matrix_dirichlet_rows_are_identity():
    spec = ExperimentSpec(experiment="ex53_case2", n=4)
    stepper = Stepper(build_structured_mesh(4), spec.run_config("feedback"))
    W = np.linspace(-1, 1, stepper.mesh.num_nodes)
    A = stepper.matrix(W).toarray()
    for i in stepper.dirichlet:
        expect = np.zeros(len(W))
        expect[i] = 1.0
        assert np.array_equal(A[i], expect)


def test_build_step_matrix_matches_stepper():
    mesh = build_structured_mesh(5)
    W = interpolate(mesh, BUBBLE.fn)
    stepper = Stepper(mesh, _cfg())
    A = build_step_matrix(mesh, EX51, "feedback", W, 1e-3)
    assert abs(A - stepper.matrix(W.values)).max() < 1e-12


def test_solvers_give_same_trajectory():
    mesh = build_structured_mesh(8)
    a = run(_cfg(T=0.02, solver=SolverConfig(method="direct-lu")), mesh)
    b = run(_cfg(T=0.02, solver=SolverConfig(method="bicgstab", rtol=1e-13)), mesh)
    assert np.linalg.norm(a.final.values - b.final.values) <= 1e-8 * np.linalg.norm(a.final.values)


def test_step_function_and_callback():
    mesh = build_structured_mesh(4)
    cfg = _cfg(T=3e-3)
    seen = []
    res = run(cfg, mesh, callback=lambda n, t, W: seen.append((n, t)))
    assert [n for n, _ in seen] == [1, 2, 3]
    assert seen[-1][1] == pytest.approx(3e-3)
    W1 = step(interpolate(mesh, BUBBLE.fn), cfg, mesh)
    again = run(_cfg(T=1e-3), mesh)
    assert np.array_equal(W1.values, again.final.values)
    assert res.config["n"] == 4 and res.config["steps"] == 3


def test_step_failure_reports_index():
    mesh = build_structured_mesh(4)
    with pytest.raises(StepFailure) as info:
        run(_cfg(solver=SolverConfig(method="bicgstab", rtol=1e-14, max_iter=1)), mesh)
    assert info.value.step == 1
    assert info.value.residual > 1e-14


def test_initial_methods_agree_to_second_order():
    mesh = build_structured_mesh(16)
    a = run(_cfg(T=1e-3), mesh)
    b = run(_cfg(T=1e-3, initial_method="h1"), mesh)
    assert abs(a.series.l2[0] - b.series.l2[0]) < 1e-3


def test_uncontrolled_stays_near_minus_three():
    res = run(_cfg(mode="none", T=1.0), build_structured_mesh(8))
    assert min(res.series.l2) > 2.0


def test_ramp_problem_metadata():
    assert EXPERIMENTS["ex54"].forcing is RAMP_STEADY_STATE
    x = np.linspace(0, 1, 5)
    gx, gy = RAMP_STEADY_STATE.grad_u_inf(x, x)
    # compatibility: f = u grad(u).1 and g = du/dn on the square
    assert np.allclose(RAMP_STEADY_STATE.f_inf(x, x), RAMP_STEADY_STATE.u_inf(x, x) * (gx + gy))
    assert np.allclose(RAMP_STEADY_STATE.g_inf(x, x, 1.0, 0.0), gx)
    assert math.isclose(float(RAMP_STEADY_STATE.u_inf(1.0, 0.3)), -0.2)
