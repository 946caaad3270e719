"""P1 assembly of the bilinear forms and loads of the feedback-controlled Burgers scheme.

Area integrals use the edge-midpoint rule (exact to degree 2); boundary
integrals use 3-point Gauss-Legendre per edge (exact to degree 5).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import SolverConfig, canonical, solve
from .mesh import BoundaryTag, Mesh, locate_points

CONTROL = (BoundaryTag.NEUMANN_CONTROL,)

# edge-midpoint rule: barycentric points, weights relative to triangle area
TRI_POINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
TRI_WEIGHTS = np.full(3, 1.0 / 3.0)


def _seven_point_rule():
    # degree-5 rule: centroid plus two orbits of three points
    r = np.sqrt(15.0)
    pts, wts = [[1 / 3, 1 / 3, 1 / 3]], [9.0 / 40.0]
    for b, w in (((6 - r) / 21, (155 - r) / 1200), ((6 + r) / 21, (155 + r) / 1200)):
        a = 1 - 2 * b
        pts += [[a, b, b], [b, a, b], [b, b, a]]
        wts += [w] * 3
    return np.array(pts), np.array(wts)


TRI7_POINTS, TRI7_WEIGHTS = _seven_point_rule()

# Gauss-Legendre on [0, 1]
_g = np.sqrt(3.0 / 5.0) / 2.0
EDGE_POINTS = np.array([0.5 - _g, 0.5, 0.5 + _g])
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class PhysicsParams:
    nu: float
    w_d: float = 0.0
    c0: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if not self.c0 > 0:
            raise ValueError("control gain c0 must be positive")
        if not self.w_d >= 0:
            raise ValueError("target state w_d must be nonnegative")


class ControlMode(str, enum.Enum):
    """Boundary law on NeumannControl edges."""

    FEEDBACK = "feedback"  # nonlinear law, cubic term lagged one step
    LINEAR = "linear"  # nu dw/dn = -c0 w
    NONE = "none"  # zero Neumann


@dataclass(frozen=True)
class ProjectionConfig:
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam >= 1:
            raise ValueError("projection shift lambda must be >= 1")


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficients of a continuous piecewise-linear function."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.num_nodes,):
            raise ValueError(f"field needs {self.mesh.num_nodes} values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    def __call__(self, points) -> np.ndarray:
        return evaluate(self, points)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.num_nodes))

    @classmethod
    def constant(cls, mesh: Mesh, c: float) -> "Field":
        return cls(mesh, np.full(mesh.num_nodes, float(c)))


def interpolate(mesh: Mesh, fn: Callable) -> Field:
    """Nodal interpolant of ``fn(x1, x2)``."""
    x, y = mesh.nodes.T
    return Field(mesh, np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape).copy())


def evaluate(field: Field, points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    tri, bary = locate_points(field.mesh, P)
    return (bary * field.values[field.mesh.triangles[tri]]).sum(axis=1)


def quadrature_points(mesh: Mesh) -> np.ndarray:
    """(T, 3, 2) edge-midpoint quadrature points."""
    return mesh.edge_midpoints


def barycentric_points(mesh: Mesh, lam: np.ndarray) -> np.ndarray:
    """(T, Q, 2) physical points of barycentric coordinates ``lam`` (Q, 3) in every triangle."""
    if lam is TRI_POINTS:
        return mesh.edge_midpoints
    return lam @ mesh.vertices


def edge_quadrature(mesh: Mesh, tags=CONTROL):
    """Selected boundary edges with their Gauss points: (edges, lengths, points (E,3,2), normals)."""
    sel = np.isin(mesh.tags, [int(t) for t in tags])
    edges = mesh.boundary_edges[sel]
    p = mesh.nodes[edges]
    pts = p[:, None, 0, :] + EDGE_POINTS[None, :, None] * (p[:, None, 1, :] - p[:, None, 0, :])
    return edges, mesh.edge_lengths[sel], pts, mesh.normals[sel]


def _eval_coef(coef, pts: np.ndarray) -> np.ndarray:
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:-1])
    return np.full(pts.shape[:-1], float(coef))


def _scatter(mesh: Mesh, local: np.ndarray, conn: np.ndarray) -> sp.csr_matrix:
    m = conn.shape[1]
    rows = np.repeat(conn, m, axis=1).ravel()
    cols = np.tile(conn, (1, m)).ravel()
    N = mesh.num_nodes
    return canonical(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, mesh.areas[:, None, None] * ref, mesh.triangles)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    G = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("tik,tjk->tij", G, G)
    return _scatter(mesh, local, mesh.triangles)


def assemble_drift(mesh: Mesh, w_d: float) -> sp.csr_matrix:
    """``w_d * (grad(phi_j) . (1,1), phi_i)``; phi_i integrates to area/3."""
    s = mesh.gradients.sum(axis=2)  # (T, 3): d/dx1 + d/dx2 of each local hat
    local = float(w_d) * (mesh.areas / 3.0)[:, None, None] * np.broadcast_to(s[:, None, :], (len(s), 3, 3))
    return _scatter(mesh, local, mesh.triangles)


def assemble_variable_drift(mesh: Mesh, coef) -> sp.csr_matrix:
    """``(c(x) grad(phi_j) . (1,1), phi_i)`` with ``c`` sampled at the area quadrature points."""
    c = _eval_coef(coef, quadrature_points(mesh))  # (T, 3)
    ci = np.einsum("q,tq,qi->ti", TRI_WEIGHTS, c, TRI_POINTS) * mesh.areas[:, None]
    s = mesh.gradients.sum(axis=2)
    return _scatter(mesh, ci[:, :, None] * s[:, None, :], mesh.triangles)


def assemble_weighted_mass(mesh: Mesh, coef) -> sp.csr_matrix:
    """``(c(x) phi_j, phi_i)`` with ``c`` sampled at the area quadrature points."""
    c = _eval_coef(coef, quadrature_points(mesh))
    local = np.einsum("q,tq,qi,qj->tij", TRI_WEIGHTS, c, TRI_POINTS, TRI_POINTS) * mesh.areas[:, None, None]
    return _scatter(mesh, local, mesh.triangles)


def assemble_boundary_mass(mesh: Mesh, tags=CONTROL) -> sp.csr_matrix:
    edges, L, _, _ = edge_quadrature(mesh, tags)
    ref = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
    return _scatter(mesh, L[:, None, None] * ref, edges)


EDGE_PHI = np.column_stack([1.0 - EDGE_POINTS, EDGE_POINTS])  # (3, 2)


def boundary_cubic_local(mesh: Mesh, values: np.ndarray, edges: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """(E, 2, 2) local matrices of ``int W^2 phi_i phi_j`` over the given edges."""
    wq = values[edges] @ EDGE_PHI.T  # (E, 3)
    return np.einsum("q,eq,qi,qj->eij", EDGE_WEIGHTS, wq * wq, EDGE_PHI, EDGE_PHI) * lengths[:, None, None]


def assemble_boundary_cubic(mesh: Mesh, W_prev: Field, tags=CONTROL) -> sp.csr_matrix:
    """``<W_prev^2 phi_j, phi_i>`` over the selected boundary edges (semi-implicit cubic term)."""
    if W_prev.mesh is not mesh:
        raise ValueError("W_prev lives on a different mesh")
    edges, L, _, _ = edge_quadrature(mesh, tags)
    return _scatter(mesh, boundary_cubic_local(mesh, W_prev.values, edges, L), edges)


def load_vector(mesh: Mesh, f) -> np.ndarray:
    """``(f, phi_i)`` by the area rule."""
    fq = _eval_coef(f, quadrature_points(mesh))
    local = np.einsum("q,tq,qi->ti", TRI_WEIGHTS, fq, TRI_POINTS) * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.num_nodes)


def gradient_load(mesh: Mesh, grad) -> np.ndarray:
    """``(grad u, grad phi_i)`` by the area rule; ``grad(x1, x2)`` returns ``(du/dx1, du/dx2)``."""
    pts = quadrature_points(mesh)
    gx, gy = grad(pts[..., 0], pts[..., 1])
    gq = np.stack([np.broadcast_to(gx, pts.shape[:-1]), np.broadcast_to(gy, pts.shape[:-1])], axis=-1)
    gbar = np.einsum("q,tqk->tk", TRI_WEIGHTS, gq)
    local = np.einsum("tk,tik->ti", gbar, mesh.gradients) * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.num_nodes)


def boundary_load(mesh: Mesh, g, tags=CONTROL) -> np.ndarray:
    """``<g, phi_i>`` over the selected edges; ``g(x1, x2, n1, n2)`` sees the outward normal."""
    edges, L, pts, nrm = edge_quadrature(mesh, tags)
    n = np.broadcast_to(nrm[:, None, :], pts.shape)
    gq = np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1], n[..., 0], n[..., 1]), dtype=float), pts.shape[:-1])
    local = np.einsum("q,eq,qi->ei", EDGE_WEIGHTS, gq, EDGE_PHI) * L[:, None]
    return np.bincount(edges.ravel(), local.ravel(), minlength=mesh.num_nodes)


def h1_project_initial(mesh: Mesh, u0: Callable, grad_u0: Callable, lam: float = 1.0,
                       solver: SolverConfig | None = None) -> Field:
    """Shifted elliptic projection: ``(grad p, grad chi) + lam (p, chi) = (grad u0, grad chi) + lam (u0, chi)``."""
    ProjectionConfig(lam)
    A = assemble_stiffness(mesh) + lam * assemble_mass(mesh)
    rhs = gradient_load(mesh, grad_u0) + lam * load_vector(mesh, u0)
    return Field(mesh, solve(A, rhs, solver or SolverConfig(method="direct-lu")))
