"""Metrics (preconditioners) and the P1 finite-element machinery behind them.

A metric is a symmetric positive definite operator ``M``; it defines the
inner product ``u^T M w`` used by the variable-metric dimer solvers.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateInput, MetricSolveFailure, SingularMetric

__all__ = [
    "Metric",
    "IdentityMetric",
    "MatrixMetric",
    "identity_metric",
    "Triangulation",
    "delaunay",
    "unit_square_mesh",
    "p1_stiffness",
    "p1_lumped_mass",
    "connectivity_metric",
    "stabilized_laplacian_metric",
    "MetricPolicy",
    "as_policy",
]


class Metric:
    """Interface: ``apply`` (M u), ``solve`` (M^{-1} g), ``inner``, ``norm``."""

    dim = 0

    def apply(self, u):
        raise NotImplementedError

    def solve(self, g):
        raise NotImplementedError

    def inner(self, u, w):
        return float(np.dot(u, self.apply(w)))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))


class IdentityMetric(Metric):
    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)

    def apply(self, u):
        return np.array(u, dtype=float)

    def solve(self, g):
        return np.array(g, dtype=float)

    def inner(self, u, w):
        return float(np.dot(u, w))

    def toarray(self):
        return np.eye(self.dim)


def identity_metric(dim):
    return IdentityMetric(dim)


class MatrixMetric(Metric):
    """Metric backed by an explicit SPD matrix, factorized once (sparse LU)."""

    def __init__(self, matrix):
        self.matrix = sp.csc_matrix(matrix, dtype=float)
        n, m = self.matrix.shape
        if n != m:
            raise ValueError("metric matrix must be square")
        self.dim = n
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise MetricSolveFailure(str(exc)) from exc

    def apply(self, u):
        return self.matrix @ np.asarray(u, dtype=float)

    def solve(self, g):
        out = self._lu.solve(np.asarray(g, dtype=float))
        if not np.all(np.isfinite(out)):
            raise MetricSolveFailure("non-finite metric solve")
        return out

    def toarray(self):
        return self.matrix.toarray()


@dataclass
class Triangulation:
    """2D triangulation with counter-clockwise triangles and fixed-node flags."""

    points: np.ndarray
    triangles: np.ndarray
    fixed_mask: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.fixed_mask is None:
            self.fixed_mask = np.zeros(len(self.points), dtype=bool)
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.points)
        ):
            raise ValueError("triangle index out of range")

    @property
    def n_points(self):
        return len(self.points)

    def signed_areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def free_index(self):
        return np.flatnonzero(~self.fixed_mask)

    def to_text(self):
        lines = [f"{self.n_points} {len(self.triangles)}"]
        for (x, y), fixed in zip(self.points, self.fixed_mask):
            lines.append(f"{float(x)!r} {float(y)!r} {int(fixed)}")
        for i, j, k in self.triangles:
            lines.append(f"{i} {j} {k}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        rows = [ln.split() for ln in text.strip().splitlines()]
        n, m = int(rows[0][0]), int(rows[0][1])
        nodes = rows[1 : 1 + n]
        tris = rows[1 + n : 1 + n + m]
        pts = [[float(r[0]), float(r[1])] for r in nodes]
        fixed = [bool(int(r[2])) for r in nodes]
        return cls(pts, [[int(c) for c in r] for r in tris], fixed)

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def _incircle(a, b, c, d):
    """Positive iff ``d`` lies strictly inside the circumcircle of CCW (a, b, c).

    Normalised by ``|a-d| |b-d| |c-d| * longest edge`` so the value is
    scale free even for the huge triangles touching the super-triangle.
    """
    ax, ay = a[0] - d[0], a[1] - d[1]
    bx, by = b[0] - d[0], b[1] - d[1]
    cx, cy = c[0] - d[0], c[1] - d[1]
    ad, bd, cd = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    det = ad * (bx * cy - cx * by) - bd * (ax * cy - cx * ay) + cd * (ax * by - bx * ay)
    edge = max((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2,
               (b[0] - c[0]) ** 2 + (b[1] - c[1]) ** 2,
               (c[0] - a[0]) ** 2 + (c[1] - a[1]) ** 2)
    scale = math.sqrt(ad * bd * cd * edge)
    return det / scale if scale > 0 else 0.0


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def delaunay(points, fixed_mask=None, tol=1e-10):
    """Bowyer-Watson Delaunay triangulation.

    Cocircular ties are broken by insertion order: a point on a circumcircle
    does not invalidate the triangle.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise DegenerateInput("delaunay needs at least 3 points")
    span = pts.max(axis=0) - pts.min(axis=0)
    diam = float(np.hypot(*span))
    rel = pts - pts[0]
    cross = rel[:, 0, None] * rel[None, :, 1] - rel[:, 1, None] * rel[None, :, 0]
    if diam == 0.0 or np.abs(cross).max() <= 1e-12 * diam**2:
        raise DegenerateInput("all points are collinear")

    center = 0.5 * (pts.max(axis=0) + pts.min(axis=0))
    big = 1e3 * diam
    super_pts = center + big * np.array([[-3.0, -3.0], [3.0, -3.0], [0.0, 3.0]])
    allp = np.vstack([pts, super_pts])
    s0, s1, s2 = n, n + 1, n + 2

    triangles = {(s0, s1, s2)}
    for ip in range(n):
        p = allp[ip]
        bad = [t for t in triangles if _incircle(allp[t[0]], allp[t[1]], allp[t[2]], p) > tol]
        edge_count = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        boundary = []
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                if edge_count[(min(e), max(e))] == 1:
                    boundary.append(e)
        triangles.difference_update(bad)
        for a, b in boundary:
            # boundary edges of the cavity keep their CCW orientation
            if _orient(allp[a], allp[b], p) > 0:
                triangles.add((a, b, ip))
    tris = sorted(
        tuple(t) for t in triangles if max(t) < n
    )
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return Triangulation(pts, tris, fixed_mask)


def unit_square_mesh(n):
    """Uniform right-triangle mesh of [0, 1]^2 with ``n`` nodes per side.

    Node ``(i, j)`` (i along x1, j along x2) has index ``j * n + i``; every
    cell is cut along its lower-left to upper-right diagonal.  Boundary
    nodes are flagged fixed.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes per side")
    t = np.linspace(0.0, 1.0, n)
    X1, X2 = np.meshgrid(t, t)
    points = np.column_stack([X1.ravel(), X2.ravel()])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    i, j = i.ravel(), j.ravel()
    a = j * n + i
    b = a + 1
    c = a + n + 1
    d = a + n
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    on_boundary = (
        (points[:, 0] == 0.0) | (points[:, 0] == 1.0)
        | (points[:, 1] == 0.0) | (points[:, 1] == 1.0)
    )
    return Triangulation(points, tris, on_boundary)


def _p1_gradients(tri):
    p = tri.points[tri.triangles]
    area = tri.signed_areas()
    if np.any(area <= 0):
        raise DegenerateInput("triangulation has degenerate or clockwise triangles")
    # gradient of the barycentric function of vertex k: rot90(edge opposite k) / (2 area)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * area[:, None, None])
    return grads, area


def p1_stiffness(tri):
    """Sparse P1 stiffness matrix ``K_ij = int grad(phi_i) . grad(phi_j)``."""
    grads, area = _p1_gradients(tri)
    local = np.einsum("tid,tjd->tij", grads, grads) * area[:, None, None]
    rows = np.repeat(tri.triangles, 3, axis=1).ravel()
    cols = np.tile(tri.triangles, (1, 3)).ravel()
    n = tri.n_points
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def p1_lumped_mass(tri):
    """Row-sum lumped P1 mass: each triangle gives area/3 to its vertices."""
    area = tri.signed_areas()
    if np.any(area <= 0):
        raise DegenerateInput("triangulation has degenerate or clockwise triangles")
    return np.bincount(
        tri.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=tri.n_points
    )


def connectivity_metric(tri, spatial_dim=2):
    """P1 Laplacian of an atomistic triangulation, restricted to free atoms.

    Acts independently on each Cartesian component of the interleaved
    displacement vector ``(x_0, y_0, x_1, y_1, ...)`` of the free atoms.
    """
    if not np.any(tri.fixed_mask):
        raise SingularMetric("connectivity metric needs at least one fixed point")
    free = tri.free_index
    K = p1_stiffness(tri)[free][:, free]
    M = sp.kron(K, sp.identity(spatial_dim), format="csc")
    return MatrixMetric(M)


def stabilized_laplacian_metric(mesh, epsilon, scale=1.0):
    """``scale * (epsilon * K + (1/epsilon) * lumped mass)`` on the free nodes."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    free = mesh.free_index
    K = p1_stiffness(mesh)[free][:, free]
    m = p1_lumped_mass(mesh)[free]
    if scale <= 0:
        raise ValueError("scale must be positive")
    return MatrixMetric(scale * (epsilon * K + sp.diags(m / epsilon)))


@dataclass
class MetricPolicy:
    """How a solver obtains its metric.

    ``builder(x)`` returns the metric for configuration ``x``;
    ``refresh="every_iteration"`` rebuilds it at each outer iteration.
    """

    kind: str = "identity"
    refresh: str = "fixed_at_start"
    builder: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("identity", "connectivity", "stabilized_laplacian", "custom"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.refresh not in ("fixed_at_start", "every_iteration"):
            raise ValueError(f"unknown refresh mode {self.refresh!r}")
        if self.refresh == "every_iteration" and self.kind != "connectivity":
            raise ValueError("per-iteration refresh is only meaningful for connectivity")

    @classmethod
    def for_model(cls, model, kind="identity", refresh="fixed_at_start"):
        return cls(kind, refresh, model.metric_builder(kind))

    def initial(self, x):
        return self.builder(x)

    def update(self, x, current):
        if self.refresh == "every_iteration":
            return self.builder(x)
        return current


def as_policy(model, metric):
    """Accept None, a Metric or a MetricPolicy and return a MetricPolicy."""
    if metric is None:
        return MetricPolicy.for_model(model, "identity")
    if isinstance(metric, MetricPolicy):
        if metric.builder is None:
            return MetricPolicy.for_model(model, metric.kind, metric.refresh)
        return metric
    if isinstance(metric, Metric):
        return MetricPolicy("custom", "fixed_at_start", lambda x, m=metric: m)
    if isinstance(metric, str):
        return MetricPolicy.for_model(model, metric)
    raise TypeError(f"cannot use {type(metric).__name__} as a metric")
