"""Semi-Lagrangian characteristics step for the self-advection ``w (grad w . (1,1))``.

The velocity field is ``(W, W)``: both components equal the scalar state.
Feet of characteristics leaving the domain are clamped back onto it by
Euclidean projection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (TRI7_POINTS, TRI7_WEIGHTS, TRI_POINTS, TRI_WEIGHTS, Field, assemble_mass,
                       barycentric_points, evaluate)
from .mesh import Mesh

QUADRATURE = "quadrature"
NODAL = "nodal"

# area rules for the convected load: name -> (barycentric points, weights)
RULES = {
    "midpoint": (TRI_POINTS, TRI_WEIGHTS),
    "seven-point": (TRI7_POINTS, TRI7_WEIGHTS),
}


@dataclass(frozen=True)
class ConvectConfig:
    substeps: int = 1
    mode: str = QUADRATURE  # or NODAL: interpolate W(foot) at the nodes, then pair with M
    rule: str = "seven-point"

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be an integer >= 1")
        if self.mode not in (QUADRATURE, NODAL):
            raise ValueError(f"unknown convect mode {self.mode!r}")
        if self.rule not in RULES:
            raise ValueError(f"unknown quadrature rule {self.rule!r}; choose from {sorted(RULES)}")


def trace_feet(mesh: Mesh, velocity: Field, X, k: float, cfg: ConvectConfig | None = None,
               start_values=None) -> np.ndarray:
    """Back-trace every point of ``X`` over time ``k`` by explicit Euler sub-steps.

    ``start_values`` optionally supplies the velocity at ``X`` itself (saves one
    point location when the caller already knows it).
    """
    cfg = cfg or ConvectConfig()
    dt = k / cfg.substeps
    Y = np.array(X, dtype=float)
    for m in range(cfg.substeps):
        v = start_values if (m == 0 and start_values is not None) else evaluate(velocity, Y)
        Y = mesh.project(Y - dt * v[:, None])
    return Y


def trace_foot(mesh: Mesh, W: Field, x, k: float, cfg: ConvectConfig | None = None) -> np.ndarray:
    if not k > 0:
        raise ValueError("time step must be positive")
    x = np.asarray(x, dtype=float)
    return trace_feet(mesh, W, x[None, :], k, cfg)[0]


def convect_load(mesh: Mesh, W: Field, k: float, cfg: ConvectConfig | None = None,
                 velocity: Field | None = None) -> np.ndarray:
    """``(W(foot(x)), phi_i)`` with feet traced along ``velocity`` (defaults to ``W``)."""
    if not k > 0:
        raise ValueError("time step must be positive")
    cfg = cfg or ConvectConfig()
    vel = W if velocity is None else velocity
    if vel.mesh is not mesh or W.mesh is not mesh:
        raise ValueError("fields must live on the given mesh")

    if cfg.mode == NODAL:
        feet = trace_feet(mesh, vel, mesh.nodes, k, cfg, start_values=vel.values)
        return assemble_mass(mesh) @ evaluate(W, feet)

    T = mesh.num_triangles
    lam, wts = RULES[cfg.rule]
    pts = barycentric_points(mesh, lam).reshape(-1, 2)
    # velocity at the quadrature points themselves is known from their own triangle
    v0 = (vel.values[mesh.triangles] @ lam.T).ravel()
    feet = trace_feet(mesh, vel, pts, k, cfg, start_values=v0)
    wq = evaluate(W, feet).reshape(T, len(wts))
    local = ((wq * wts) @ lam) * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.num_nodes)
