"""Triangulations of the unit square and convex polygons.

Node ordering on the structured mesh is row-major: node ``j*(n+1) + i`` sits at
``(i/n, j/n)``. Cell ``(i, j)`` owns triangles ``2*(j*n+i)`` (lower, below the
diagonal) and ``2*(j*n+i)+1`` (upper). Every cell is split along the diagonal
from its lower-left to its upper-right corner.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

EPS_INSIDE = 1e-12


class BoundaryTag(enum.IntEnum):
    NEUMANN_CONTROL = 0
    NEUMANN_ZERO = 1
    DIRICHLET_ZERO = 2

    @property
    def label(self) -> str:
        return _TAG_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "BoundaryTag":
        key = text.strip().replace("-", "").replace("_", "").lower()
        for tag, label in _TAG_LABELS.items():
            if label.lower() == key or tag.name.replace("_", "").lower() == key:
                return tag
        aliases = {"control": cls.NEUMANN_CONTROL, "feedback": cls.NEUMANN_CONTROL,
                   "neumann": cls.NEUMANN_ZERO, "dirichlet": cls.DIRICHLET_ZERO}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown boundary tag {text!r}")


_TAG_LABELS = {
    BoundaryTag.NEUMANN_CONTROL: "NeumannControl",
    BoundaryTag.NEUMANN_ZERO: "NeumannZero",
    BoundaryTag.DIRICHLET_ZERO: "DirichletZero",
}

SIDES = ("left", "right", "bottom", "top")
_SIDE_ALIASES = {"x1=0": "left", "x1=1": "right", "x2=0": "bottom", "x2=1": "top"}


class OutOfDomainError(ValueError):
    """A query point lies outside the meshed domain."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with tagged, outward-oriented boundary edges.

    ``boundary_edges[e] = (a, b)`` is ordered so the domain lies to the left of
    ``a -> b``; ``normals[e]`` is the outward unit normal.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    tags: np.ndarray
    normals: np.ndarray
    n: int | None = None
    polygon: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def structured(self) -> bool:
        return self.n is not None

    @cached_property
    def vertices(self) -> np.ndarray:
        """(T, 3, 2) corner coordinates per triangle."""
        return self.nodes[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        v = self.vertices
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three local hat functions."""
        v = self.vertices
        # grad(phi_i) = inward normal of the edge opposite i, scaled by its length / (2 area)
        opp = np.stack([v[:, 2] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 0]], axis=1)
        g = np.empty_like(opp)
        g[..., 0] = -opp[..., 1]
        g[..., 1] = opp[..., 0]
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """(T, 3, 2) midpoints of edges (0,1), (1,2), (2,0) of every triangle."""
        v = self.vertices
        return 0.5 * np.stack([v[:, 0] + v[:, 1], v[:, 1] + v[:, 2], v[:, 2] + v[:, 0]], axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def h(self) -> float:
        v = self.vertices
        d = np.stack([np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))])
        return float(d.max())

    @cached_property
    def edges(self) -> np.ndarray:
        """All unique undirected edges, sorted node pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(T, 3): triangle across the edge opposite local vertex i, or -1."""
        t = self.triangles
        T = len(t)
        owner: dict[tuple[int, int], tuple[int, int]] = {}
        nb = -np.ones((T, 3), dtype=np.int64)
        for k in range(T):
            for i in range(3):
                a, b = t[k, (i + 1) % 3], t[k, (i + 2) % 3]
                key = (min(a, b), max(a, b))
                if key in owner:
                    k2, i2 = owner.pop(key)
                    nb[k, i] = k2
                    nb[k2, i2] = k
                else:
                    owner[key] = (k, i)
        return nb

    @cached_property
    def bounding_polygon(self) -> np.ndarray:
        if self.polygon is not None:
            return np.asarray(self.polygon, dtype=float)
        return _convex_hull(self.nodes)

    def nodes_with_tag(self, *tags: BoundaryTag) -> np.ndarray:
        sel = np.isin(self.tags, [int(t) for t in tags])
        return np.unique(self.boundary_edges[sel])

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def with_tags(self, tags) -> "Mesh":
        tags = np.asarray(tags, dtype=np.int64)
        if tags.shape != self.tags.shape:
            raise ValueError("one tag per boundary edge required")
        return Mesh(self.nodes, self.triangles, self.boundary_edges, tags, self.normals, self.n, self.polygon)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Euclidean projection of points onto the closed domain."""
        pts = np.asarray(points, dtype=float)
        if self.structured:
            return np.clip(pts, 0.0, 1.0)
        return _project_convex(pts, self.bounding_polygon)


def build_structured_mesh(n: int) -> Mesh:
    """Uniform ``n x n`` grid on the unit square, every cell cut lower-left to upper-right."""
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    s[-1] = 1.0
    X, Y = np.meshgrid(s, s)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])

    r = np.arange(n)
    bottom = np.column_stack([r, r + 1])
    right = np.column_stack([r * (n + 1) + n, (r + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + r + 1, n * (n + 1) + r])
    left = np.column_stack([(r + 1) * (n + 1), r * (n + 1)])
    edges = np.concatenate([bottom, right, top, left])
    normals = np.concatenate([
        np.tile([0.0, -1.0], (n, 1)), np.tile([1.0, 0.0], (n, 1)),
        np.tile([0.0, 1.0], (n, 1)), np.tile([-1.0, 0.0], (n, 1)),
    ])
    tags = np.full(len(edges), int(BoundaryTag.NEUMANN_CONTROL), dtype=np.int64)
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Mesh(nodes, tris, edges, tags, normals, n=n, polygon=square)


def mesh_from_triangulation(nodes, triangles, polygon=None) -> Mesh:
    """Wrap an arbitrary triangulation; triangles are reoriented CCW, all edges tagged NeumannControl."""
    nodes = np.asarray(nodes, dtype=float)
    tris = np.array(triangles, dtype=np.int64)
    v = nodes[tris]
    d1, d2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(np.abs(signed) < 1e-300):
        raise ValueError("degenerate triangle")
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    edges = directed[counts[inverse.ravel()] == 1]
    p = nodes[edges]
    t = p[:, 1] - p[:, 0]
    L = np.linalg.norm(t, axis=1)
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / L[:, None]
    tags = np.full(len(edges), int(BoundaryTag.NEUMANN_CONTROL), dtype=np.int64)
    return Mesh(nodes, tris, edges, tags, normals, n=None,
                polygon=None if polygon is None else np.asarray(polygon, dtype=float))


def build_polygon_mesh(vertices, h: float) -> Mesh:
    """Delaunay mesh of a convex polygon with target spacing ``h``."""
    poly = np.asarray(vertices, dtype=float)
    if len(poly) < 3:
        raise ValueError("polygon needs at least three vertices")
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    pts = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        m = max(1, int(np.ceil(np.linalg.norm(b - a) / h)))
        s = np.arange(m)[:, None] / m
        pts.append(a + s * (b - a))
    boundary = np.concatenate(pts)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    gx = np.arange(lo[0] + h / 2, hi[0], h)
    gy = np.arange(lo[1] + h / 2, hi[1], h * np.sqrt(3) / 2)
    interior = []
    for r, y in enumerate(gy):
        xs = gx + (h / 2 if r % 2 else 0.0)
        interior.append(np.column_stack([xs, np.full_like(xs, y)]))
    interior = np.concatenate(interior) if interior else np.empty((0, 2))
    interior = interior[_inside_convex(interior, poly, margin=0.3 * h)]
    nodes = np.concatenate([boundary, interior])
    tri = Delaunay(nodes)
    simplices = tri.simplices
    v = nodes[simplices]
    d1, d2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    simplices = simplices[area > 1e-14 * h * h]
    return mesh_from_triangulation(nodes, simplices, polygon=poly)


def _side_of(normal: np.ndarray) -> str:
    nx, ny = normal
    if nx < -0.5:
        return "left"
    if nx > 0.5:
        return "right"
    if ny < -0.5:
        return "bottom"
    return "top"


def tag_boundary(mesh: Mesh, rule: dict) -> Mesh:
    """Tag each boundary edge of the unit square by the side that contains it.

    ``rule`` maps every side (``left``/``right``/``bottom``/``top``, or
    ``x1=0``/``x1=1``/``x2=0``/``x2=1``) to a tag. Edges never straddle a
    corner, so corner nodes simply inherit every tag of their two sides.
    """
    resolved = {}
    for side, tag in rule.items():
        name = _SIDE_ALIASES.get(str(side).replace(" ", ""), str(side))
        if name not in SIDES:
            raise ValueError(f"unknown side {side!r}")
        resolved[name] = tag if isinstance(tag, BoundaryTag) else BoundaryTag.parse(str(tag))
    missing = [s for s in SIDES if s not in resolved]
    if missing:
        raise ValueError(f"tag rule missing sides: {', '.join(missing)}")
    tags = np.array([int(resolved[_side_of(nv)]) for nv in mesh.normals], dtype=np.int64)
    return mesh.with_tags(tags)


def _barycentric(tri_xy: np.ndarray, p: np.ndarray) -> np.ndarray:
    a, b, c = tri_xy
    T = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
    l1, l2 = np.linalg.solve(T, p - a)
    return np.array([1.0 - l1 - l2, l1, l2])


def _finish(bary: np.ndarray) -> np.ndarray:
    bary = np.clip(bary, 0.0, 1.0)
    return bary / bary.sum(axis=-1, keepdims=True)


def locate_points(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized point location: triangle index and barycentric coordinates per point."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.structured:
        return _locate_structured(mesh, P)
    tri = np.empty(len(P), dtype=np.int64)
    bary = np.empty((len(P), 3))
    start = 0
    for m, p in enumerate(P):
        tri[m], bary[m] = _walk(mesh, p, start)
        start = tri[m]
    return tri, bary


def locate_point(mesh: Mesh, p) -> tuple[int, np.ndarray]:
    tri, bary = locate_points(mesh, np.asarray(p, dtype=float)[None, :])
    return int(tri[0]), bary[0]


def _locate_structured(mesh: Mesh, P: np.ndarray):
    n = mesh.n
    if not (P.min() >= -EPS_INSIDE and P.max() <= 1.0 + EPS_INSIDE):
        bad = P[~np.all((P >= -EPS_INSIDE) & (P <= 1.0 + EPS_INSIDE), axis=1)][0]
        raise OutOfDomainError(f"point {tuple(bad)} outside the unit square")
    Q = np.clip(P, 0.0, 1.0) * n
    ij = np.minimum(np.floor(Q), n - 1).astype(np.int64)
    s = Q[:, 0] - ij[:, 0]
    t = Q[:, 1] - ij[:, 1]
    cell = ij[:, 1] * n + ij[:, 0]
    upper = t > s
    tri = 2 * cell + upper
    bary = np.empty((len(P), 3))
    # lower (a, b, c): (1-s, s-t, t); upper (a, c, d): (1-t, s, t-s)
    bary[:, 0] = np.where(upper, 1.0 - t, 1.0 - s)
    bary[:, 1] = np.where(upper, s, s - t)
    bary[:, 2] = np.where(upper, t - s, t)
    return tri, np.clip(bary, 0.0, 1.0, out=bary)


def _walk(mesh: Mesh, p: np.ndarray, start: int, seed: int = 0):
    """Straight (visibility) walk; random restart after 2*T steps."""
    T = mesh.num_triangles
    rng = None
    cur = int(start)
    steps = 0
    while True:
        bary = _barycentric(mesh.vertices[cur], p)
        worst = int(np.argmin(bary))
        if bary[worst] >= -EPS_INSIDE:
            return cur, _finish(bary)
        nxt = mesh.neighbors[cur, worst]
        if nxt < 0:
            raise OutOfDomainError(f"point {tuple(p)} outside the domain")
        cur = int(nxt)
        steps += 1
        if steps > 2 * T:
            rng = rng or np.random.default_rng(seed)
            cur = int(rng.integers(T))
            steps = 0


def barycentric_to_cartesian(mesh: Mesh, tri, bary) -> np.ndarray:
    tri = np.atleast_1d(tri)
    bary = np.atleast_2d(bary)
    return np.einsum("mi,mij->mj", bary, mesh.vertices[tri])


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _convex_hull(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull

    hull = ConvexHull(points)
    return points[hull.vertices]


def _inside_convex(P: np.ndarray, poly: np.ndarray, margin: float = 0.0) -> np.ndarray:
    inside = np.ones(len(P), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        t = b - a
        nrm = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        inside &= (P - a) @ nrm <= -margin
    return inside


def _project_convex(P: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    P2 = np.atleast_2d(P)
    inside = _inside_convex(P2, poly, margin=-EPS_INSIDE)
    out = P2.copy()
    if np.all(inside):
        return out.reshape(P.shape)
    Q = P2[~inside]
    best = np.full(len(Q), np.inf)
    proj = np.empty_like(Q)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        t = b - a
        s = np.clip((Q - a) @ t / (t @ t), 0.0, 1.0)
        cand = a + s[:, None] * t
        d = np.linalg.norm(Q - cand, axis=1)
        take = d < best
        best[take] = d[take]
        proj[take] = cand[take]
    out[~inside] = proj
    return out.reshape(P.shape)


def write_mesh(mesh: Mesh, path, values=None) -> None:
    """Plain-text mesh (optionally with one nodal value per node row)."""
    lines = [f"{mesh.num_nodes} nodes {mesh.num_triangles} triangles {len(mesh.boundary_edges)} edges"
             + (f" structured {mesh.n}" if mesh.structured else "")]
    if values is not None:
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.num_nodes,):
            raise ValueError("one value per node required")
        lines += [f"{float(x)!r} {float(y)!r} {float(v)!r}" for (x, y), v in zip(mesh.nodes, values)]
    else:
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [f"{a} {b} {BoundaryTag(t).label}" for (a, b), t in zip(mesh.boundary_edges, mesh.tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> tuple[Mesh, np.ndarray | None]:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = rows[0]
    try:
        N, T, B = int(head[0]), int(head[2]), int(head[4])
        if head[1] != "nodes" or head[3] != "triangles" or head[5] != "edges":
            raise ValueError
    except (ValueError, IndexError):
        raise ValueError(f"bad mesh header: {' '.join(head)}") from None
    n = int(head[7]) if len(head) >= 8 and head[6] == "structured" else None
    node_rows = rows[1:1 + N]
    nodes = np.array([[float(r[0]), float(r[1])] for r in node_rows])
    values = np.array([float(r[2]) for r in node_rows]) if node_rows and len(node_rows[0]) > 2 else None
    tris = np.array([[int(x) for x in r] for r in rows[1 + N:1 + N + T]], dtype=np.int64)
    erows = rows[1 + N + T:1 + N + T + B]
    edges = np.array([[int(r[0]), int(r[1])] for r in erows], dtype=np.int64).reshape(-1, 2)
    tags = np.array([int(BoundaryTag.parse(r[2])) for r in erows], dtype=np.int64)
    p = nodes[edges]
    t = p[:, 1] - p[:, 0]
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]
    polygon = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) if n is not None else None
    return Mesh(nodes, tris, edges, tags, normals, n=n, polygon=polygon), values
