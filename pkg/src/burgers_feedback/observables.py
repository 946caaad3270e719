"""Norms, Lyapunov energy, control traces, stability constants and error measurement."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    CONTROL,
    EDGE_PHI,
    EDGE_WEIGHTS,
    ControlMode,
    Field,
    PhysicsParams,
    assemble_mass,
    assemble_stiffness,
    edge_quadrature,
    evaluate,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
CSV_COLUMNS = ("t", "l2", "h1semi", "ctrl_l2", "energy")


def friedrichs_constant(vertices) -> float:
    """``max(sup |x|^2, sup |x|)`` over the polygon boundary (attained at a vertex)."""
    V = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if len(V) < 3 or _polygon_area(V) <= 0.0:
        raise ValueError("friedrichs_constant needs a nondegenerate polygon")
    r2 = float(np.max(V[:, 0] ** 2 + V[:, 1] ** 2))  # squared first: exact on grid vertices
    return max(r2, math.sqrt(r2))


def _polygon_area(V: np.ndarray) -> float:
    x, y = V[:, 0], V[:, 1]
    return abs(0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


@dataclass(frozen=True)
class StabilityBounds:
    C_F: float
    alpha_max: float
    C_Lyp: float


def stability_bounds(params: PhysicsParams, vertices=UNIT_SQUARE) -> StabilityBounds:
    C_F = friedrichs_constant(vertices)
    alpha = min(params.nu, params.c0 + params.w_d) / C_F
    return StabilityBounds(C_F=C_F, alpha_max=alpha, C_Lyp=2.0 * alpha)


def control_law(w, params: PhysicsParams, mode: ControlMode | str) -> np.ndarray:
    """Pointwise Neumann control ``v2`` for state values ``w``."""
    w = np.asarray(w, dtype=float)
    mode = ControlMode(mode)
    if mode is ControlMode.FEEDBACK:
        return -(2.0 * (params.c0 + params.w_d) * w + (2.0 / (9.0 * params.c0)) * w ** 3) / params.nu
    if mode is ControlMode.LINEAR:
        return -params.c0 * w / params.nu
    return np.zeros_like(w)


def control_trace(W: Field, params: PhysicsParams, mode: ControlMode | str):
    """``(node indices, v2 values)`` on the NeumannControl boundary nodes."""
    nodes = W.mesh.nodes_with_tag(*CONTROL)
    return nodes, control_law(W.values[nodes], params, mode)


def control_l2(W: Field, params: PhysicsParams, mode: ControlMode | str) -> float:
    """``||v2||`` in L2 of the controlled boundary, law applied at Gauss points of the P1 trace."""
    edges, L, _, _ = edge_quadrature(W.mesh, CONTROL)
    if len(edges) == 0:
        return 0.0
    wq = W.values[edges] @ EDGE_PHI.T
    v = control_law(wq, params, mode)
    return math.sqrt(float(np.sum(EDGE_WEIGHTS * v * v * L[:, None])))


def _qform(A, x) -> float:
    return math.sqrt(max(float(x @ (A @ x)), 0.0))


def norms(W, M, K, B) -> tuple[float, float, float]:
    """(L2 norm, H1 seminorm, boundary L2 norm) from the assembled Gram matrices."""
    x = W.values if isinstance(W, Field) else np.asarray(W, dtype=float)
    for A in (M, K, B):
        if A.shape != (len(x), len(x)):
            raise ValueError(f"operator of shape {A.shape} does not match field of length {len(x)}")
    return _qform(M, x), _qform(K, x), _qform(B, x)


@dataclass
class TimeSeries:
    """Per-step observables; row 0 is the initial state at t = 0."""

    t: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    h1semi: list = field(default_factory=list)
    ctrl_l2: list = field(default_factory=list)

    def append(self, t: float, l2: float, h1semi: float, ctrl_l2: float) -> None:
        if self.t and not t > self.t[-1]:
            raise ValueError("time must be strictly increasing")
        self.t.append(float(t))
        self.l2.append(float(l2))
        self.h1semi.append(float(h1semi))
        self.ctrl_l2.append(float(ctrl_l2))

    @property
    def energy(self) -> np.ndarray:
        return 0.5 * np.asarray(self.l2) ** 2

    @property
    def n_steps(self) -> int:
        return max(len(self.t) - 1, 0)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {"t": np.asarray(self.t), "l2": np.asarray(self.l2), "h1semi": np.asarray(self.h1semi),
                "ctrl_l2": np.asarray(self.ctrl_l2), "energy": self.energy}

    def write_csv(self, path, metadata: dict | None = None) -> None:
        cols = self.as_arrays()
        with open(path, "w", newline="") as fh:
            for key, val in (metadata or {}).items():
                fh.write(f"# {key}: {val}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in zip(*(cols[c] for c in CSV_COLUMNS)):
                writer.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def read_csv(cls, path) -> "TimeSeries":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(lines)
        out = cls()
        for row in reader:
            out.append(float(row["t"]), float(row["l2"]), float(row["h1semi"]), float(row["ctrl_l2"]))
        return out


def default_window(t_final: float) -> tuple[float, float]:
    return 0.1 * t_final, 0.9 * t_final


def decay_rate_fit(series, window: tuple[float, float] | None = None) -> float:
    """Least-squares slope of ``-log ||W(t)||`` over the window.

    ``series`` is a TimeSeries or a ``(t, norms)`` pair.
    """
    if isinstance(series, TimeSeries):
        t, y = np.asarray(series.t), np.asarray(series.l2)
    else:
        t, y = (np.asarray(a, dtype=float) for a in series)
    if window is None:
        window = default_window(float(t[-1]))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < 2:
        raise ValueError("decay fit needs at least two samples in the window")
    if np.any(y[sel] <= 0):
        raise ValueError("decay fit undefined: zero norm in window")
    slope = np.polyfit(t[sel], -np.log(y[sel]), 1)[0]
    return float(slope)


def transfer(W_coarse: Field, target_mesh) -> np.ndarray:
    """Values of ``W_coarse`` at the nodes of ``target_mesh``."""
    return evaluate(W_coarse, target_mesh.nodes)


def cross_mesh_error(W_coarse: Field, W_ref: Field, M=None, K=None) -> tuple[float, float]:
    """(L2 error, H1 error) of a coarse field against a finer reference, measured on the reference mesh."""
    mesh = W_ref.mesh
    if W_coarse.mesh.num_nodes >= mesh.num_nodes:
        raise ValueError("reference mesh must be strictly finer")
    M = assemble_mass(mesh) if M is None else M
    K = assemble_stiffness(mesh) if K is None else K
    d = transfer(W_coarse, mesh) - W_ref.values
    l2 = _qform(M, d)
    return l2, math.sqrt(l2 * l2 + _qform(K, d) ** 2)


def control_error(W_coarse: Field, W_ref: Field, params: PhysicsParams, mode: ControlMode | str = ControlMode.FEEDBACK,
                  norm: str = "l2") -> float:
    """Boundary error of the control law; ``norm`` is ``"l2"`` (Gauss points) or ``"max"`` (reference nodes)."""
    mesh = W_ref.mesh
    if norm == "max":
        nodes = mesh.nodes_with_tag(*CONTROL)
        if len(nodes) == 0:
            return 0.0
        diff = control_law(evaluate(W_coarse, mesh.nodes[nodes]), params, mode) - control_law(W_ref.values[nodes], params, mode)
        return float(np.max(np.abs(diff)))
    if norm != "l2":
        raise ValueError(f"unknown norm {norm!r}")
    edges, L, pts, _ = edge_quadrature(mesh, CONTROL)
    if len(edges) == 0:
        return 0.0
    w_ref = W_ref.values[edges] @ EDGE_PHI.T
    w_c = evaluate(W_coarse, pts.reshape(-1, 2)).reshape(w_ref.shape)
    diff = control_law(w_c, params, mode) - control_law(w_ref, params, mode)
    return math.sqrt(float(np.sum(EDGE_WEIGHTS * diff * diff * L[:, None])))
