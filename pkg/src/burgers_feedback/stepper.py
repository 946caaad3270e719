"""Fully discrete semi-implicit characteristic-Galerkin time stepping.

Each step solves

    (M/k + nu K + D + B_ctrl(W_prev)) W = convect_load(W_prev)/k + r

where ``D`` is the linearized drift, ``B_ctrl`` the boundary feedback term and
``r`` the steady-state residual load of the forced variant (zero otherwise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import (
    CONTROL,
    ControlMode,
    Field,
    PhysicsParams,
    ProjectionConfig,
    _scatter,
    assemble_boundary_mass,
    assemble_drift,
    assemble_mass,
    assemble_stiffness,
    assemble_variable_drift,
    assemble_weighted_mass,
    boundary_cubic_local,
    boundary_load,
    edge_quadrature,
    gradient_load,
    h1_project_initial,
    interpolate,
    load_vector,
)
from .linalg import LinearSolver, SolverConfig, SolverFailure, canonical
from .mesh import BoundaryTag, Mesh, tag_boundary
from .observables import TimeSeries, control_l2
from .transport import ConvectConfig, convect_load

__all__ = ["ControlMode", "ForcedProblem", "RunConfig", "RunResult", "Stepper",
           "build_step_matrix", "step", "run", "initial_field"]


def _zero(*args):
    return 0.0


@dataclass(frozen=True)
class ForcedProblem:
    """Time-independent steady state ``u_inf`` with forcing ``f_inf`` and Neumann data ``g_inf``.

    ``g_inf`` is called as ``g_inf(x1, x2, n1, n2)`` with the outward normal.
    """

    u_inf: Callable
    grad_u_inf: Callable
    f_inf: Callable = _zero
    g_inf: Callable = _zero
    name: str = "custom"

    def drift_coefficient(self, x1, x2):
        gx, gy = self.grad_u_inf(x1, x2)
        return np.asarray(gx) + np.asarray(gy)


@dataclass(frozen=True)
class RunConfig:
    k: float
    T: float
    physics: PhysicsParams
    w0: Callable
    mode: ControlMode = ControlMode.FEEDBACK
    w0_grad: Callable | None = None
    initial_id: str = "custom"
    initial_method: str = "interpolate"  # or "h1"
    forcing: ForcedProblem | None = None
    tag_rule: dict | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    convect: ConvectConfig = field(default_factory=ConvectConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        object.__setattr__(self, "mode", ControlMode(self.mode))
        if not 0 < self.k < 1:
            raise ValueError(f"time step must satisfy 0 < k < 1, got {self.k}")
        if not self.T >= self.k:
            raise ValueError(f"final time T={self.T} shorter than one step k={self.k}")
        if self.initial_method not in ("interpolate", "h1"):
            raise ValueError(f"unknown initial method {self.initial_method!r}")
        if self.initial_method == "h1" and self.w0_grad is None:
            raise ValueError("H1 projection of the initial state needs its gradient")

    @property
    def num_steps(self) -> int:
        return int(round(self.T / self.k))

    def describe(self) -> dict:
        p = self.physics
        return {
            "k": self.k, "T": self.T, "steps": self.num_steps, "nu": p.nu, "w_d": p.w_d, "c0": p.c0,
            "mode": self.mode.value, "initial": self.initial_id, "initial_method": self.initial_method,
            "lambda": self.projection.lam,
            "forcing": None if self.forcing is None else self.forcing.name,
            "tags": None if self.tag_rule is None else {s: _tag_name(t) for s, t in self.tag_rule.items()},
            "solver": self.solver.method or "auto", "solver_rtol": self.solver.rtol,
            "convect_substeps": self.convect.substeps, "convect_mode": self.convect.mode,
            "convect_rule": self.convect.rule,
        }


def _tag_name(tag) -> str:
    return tag.label if isinstance(tag, BoundaryTag) else str(tag)


def _drift(mesh: Mesh, params: PhysicsParams, forcing: ForcedProblem | None):
    if forcing is None:
        return assemble_drift(mesh, params.w_d)
    return assemble_variable_drift(mesh, forcing.u_inf) + assemble_weighted_mass(mesh, forcing.drift_coefficient)


def _residual_load(mesh: Mesh, params: PhysicsParams, forcing: ForcedProblem) -> np.ndarray:
    """Load left over when ``u_inf`` is not an exact discrete steady state (zero for compatible data)."""
    def interior(x1, x2):
        gx, gy = forcing.grad_u_inf(x1, x2)
        return forcing.f_inf(x1, x2) - forcing.u_inf(x1, x2) * (np.asarray(gx) + np.asarray(gy))

    neumann = (BoundaryTag.NEUMANN_CONTROL, BoundaryTag.NEUMANN_ZERO)
    return (load_vector(mesh, interior) - params.nu * gradient_load(mesh, forcing.grad_u_inf)
            + params.nu * boundary_load(mesh, forcing.g_inf, neumann))


def _with_dirichlet(A, dirichlet: np.ndarray) -> sp.csr_matrix:
    if len(dirichlet) == 0:
        return A
    keep = np.ones(A.shape[0])
    keep[dirichlet] = 0.0
    A = sp.diags(keep) @ A + sp.diags(1.0 - keep)
    A = canonical(A)
    A.eliminate_zeros()
    return A


def _fixed_matrix(mesh, params, mode, k, forcing=None, M=None, K=None, B=None):
    M = assemble_mass(mesh) if M is None else M
    K = assemble_stiffness(mesh) if K is None else K
    A = M / k + params.nu * K + _drift(mesh, params, forcing)
    mode = ControlMode(mode)
    if mode is not ControlMode.NONE:
        B = assemble_boundary_mass(mesh) if B is None else B
        gain = 2.0 * (params.c0 + params.w_d) if mode is ControlMode.FEEDBACK else params.c0
        A = A + gain * B
    return canonical(A)


def build_step_matrix(mesh: Mesh, params: PhysicsParams, mode, W_prev: Field, k: float,
                      forcing: ForcedProblem | None = None) -> sp.csr_matrix:
    """System matrix of one step, DirichletZero rows replaced by identity rows."""
    A = _fixed_matrix(mesh, params, mode, k, forcing)
    if ControlMode(mode) is ControlMode.FEEDBACK:
        edges, L, _, _ = edge_quadrature(mesh, CONTROL)
        A = A + (2.0 / (9.0 * params.c0)) * _scatter(mesh, boundary_cubic_local(mesh, W_prev.values, edges, L), edges)
    return _with_dirichlet(canonical(A), mesh.nodes_with_tag(BoundaryTag.DIRICHLET_ZERO))


def initial_field(mesh: Mesh, cfg: RunConfig) -> Field:
    if cfg.initial_method == "h1":
        return h1_project_initial(mesh, cfg.w0, cfg.w0_grad, cfg.projection.lam)
    return interpolate(mesh, cfg.w0)


class Stepper:
    """Caches every time-independent operator of a run."""

    def __init__(self, mesh: Mesh, cfg: RunConfig):
        if cfg.tag_rule is not None:
            mesh = tag_boundary(mesh, cfg.tag_rule)
        self.mesh = mesh
        self.cfg = cfg
        p = cfg.physics
        self.M = assemble_mass(mesh)
        self.K = assemble_stiffness(mesh)
        self.B = assemble_boundary_mass(mesh)
        self.dirichlet = mesh.nodes_with_tag(BoundaryTag.DIRICHLET_ZERO)
        self.fixed = _fixed_matrix(mesh, p, cfg.mode, cfg.k, cfg.forcing, self.M, self.K, self.B)
        self.residual = None if cfg.forcing is None else _residual_load(mesh, p, cfg.forcing)
        self._edges, self._lengths, _, _ = edge_quadrature(mesh, CONTROL)
        self._cubic_gain = 2.0 / (9.0 * p.c0)
        self._solver = None
        if cfg.mode is not ControlMode.FEEDBACK or len(self._edges) == 0:
            self._solver = LinearSolver(_with_dirichlet(self.fixed, self.dirichlet), cfg.solver)

    def matrix(self, W_prev: np.ndarray) -> sp.csr_matrix:
        A = self.fixed
        if self.cfg.mode is ControlMode.FEEDBACK and len(self._edges):
            local = boundary_cubic_local(self.mesh, W_prev, self._edges, self._lengths)
            A = A + self._cubic_gain * _scatter(self.mesh, local, self._edges)
        return _with_dirichlet(canonical(A), self.dirichlet)

    def rhs(self, W_prev: np.ndarray) -> np.ndarray:
        b = convect_load(self.mesh, Field(self.mesh, W_prev), self.cfg.k, self.cfg.convect) / self.cfg.k
        if self.residual is not None:
            b = b + self.residual
        b[self.dirichlet] = 0.0
        return b

    def advance(self, W_prev: np.ndarray) -> np.ndarray:
        solver = self._solver or LinearSolver(self.matrix(W_prev), self.cfg.solver)
        W = solver(self.rhs(W_prev), x0=W_prev)
        if not np.all(np.isfinite(W)):
            raise SolverFailure("non-finite solution")
        return W

    def observe(self, W: np.ndarray) -> tuple[float, float, float]:
        l2 = math.sqrt(max(float(W @ (self.M @ W)), 0.0))
        h1 = math.sqrt(max(float(W @ (self.K @ W)), 0.0))
        return l2, h1, control_l2(Field(self.mesh, W), self.cfg.physics, self.cfg.mode)


class StepFailure(SolverFailure):
    def __init__(self, index: int, cause: SolverFailure):
        RuntimeError.__init__(self, f"step {index}: {cause}")
        self.step = index
        self.residual = cause.residual


def step(state: Field, cfg: RunConfig, mesh: Mesh) -> Field:
    """One time step from ``state``."""
    if state.mesh is not mesh:
        raise ValueError("state lives on a different mesh")
    stepper = Stepper(mesh, cfg)
    return Field(stepper.mesh, stepper.advance(state.values))


@dataclass
class RunResult:
    series: TimeSeries
    final: Field
    config: dict


def run(cfg: RunConfig, mesh: Mesh, W0: Field | None = None, callback=None) -> RunResult:
    """Iterate from t=0 to T recording observables every step.

    ``callback(n, t, values)`` is invoked after each step.
    """
    stepper = Stepper(mesh, cfg)
    mesh = stepper.mesh
    W = (initial_field(mesh, cfg) if W0 is None else W0).values.copy()
    series = TimeSeries()
    series.append(0.0, *stepper.observe(W))
    for n in range(1, cfg.num_steps + 1):
        try:
            W = stepper.advance(W)
        except SolverFailure as exc:
            raise StepFailure(n, exc) from exc
        t = n * cfg.k
        series.append(t, *stepper.observe(W))
        if callback is not None:
            callback(n, t, W)
    meta = cfg.describe()
    meta.update({"n": mesh.n, "h": mesh.h, "nodes": mesh.num_nodes})
    return RunResult(series=series, final=Field(mesh, W), config=meta)
