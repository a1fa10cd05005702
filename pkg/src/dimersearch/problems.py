"""Energy landscapes used to exercise the dimer solvers."""

import numpy as np
from scipy.optimize import bisect

from .core import EnergyModel
from .errors import EmptyFreeSet, RootBracketFailure
from .metrics import (
    Triangulation,
    connectivity_metric,
    delaunay,
    identity_metric,
    p1_lumped_mass,
    p1_stiffness,
    stabilized_laplacian_metric,
    unit_square_mesh,
)

__all__ = [
    "Quartic2D",
    "DoubleWell1D",
    "AsymmetricWell1D",
    "MorseVacancy",
    "PhaseField",
    "build_morse_vacancy",
    "morse_cluster",
    "build_phase_field",
    "doublewell_curvature",
    "doublewell_turning_points",
    "morse_pair",
    "PROBLEMS",
]


class Quartic2D(EnergyModel):
    """``E(x, y) = (x^2 - 1)^2 + y^2``: minima (+-1, 0), saddle (0, 0)."""

    name = "quartic2d"

    def __init__(self):
        super().__init__(2)

    def _energy(self, x):
        return (x[0] ** 2 - 1.0) ** 2 + x[1] ** 2

    def _gradient(self, x):
        return np.array([4.0 * x[0] * (x[0] ** 2 - 1.0), 2.0 * x[1]])

    def default_start(self):
        return np.array([0.2, 1.0]), np.array([1.0, 1.0]) / np.sqrt(2.0)

    def reference_saddle(self):
        return np.zeros(2)


class DoubleWell1D(EnergyModel):
    """``E(x) = (1 - x^2)^2 / 4``; the saddle (a maximum) is at 0."""

    name = "doublewell1d"

    def __init__(self):
        super().__init__(1)

    def _energy(self, x):
        return 0.25 * (1.0 - x[0] ** 2) ** 2

    def _gradient(self, x):
        return np.array([x[0] ** 3 - x[0]])

    def default_start(self):
        return np.array([0.3]), np.array([1.0])

    def reference_saddle(self):
        return np.zeros(1)


class AsymmetricWell1D(EnergyModel):
    """``E(x) = x^4/4 - x^2/2 + c x^3``.

    The cubic tilt breaks the x -> -x symmetry so the dimer saddle differs
    from the exact saddle at 0 by O(h^2).
    """

    name = "asymwell1d"

    def __init__(self, c=0.1):
        super().__init__(1)
        self.c = float(c)

    def _energy(self, x):
        t = x[0]
        return 0.25 * t**4 - 0.5 * t**2 + self.c * t**3

    def _gradient(self, x):
        t = x[0]
        return np.array([t**3 - t + 3.0 * self.c * t**2])

    def default_start(self):
        return np.array([0.2]), np.array([1.0])

    def reference_saddle(self):
        return np.zeros(1)


def doublewell_curvature(x, h, power=1):
    """Dimer curvature ``(E'(x+h) - E'(x-h)) / (2 h**power)`` of the double well.

    ``power=1`` is the discrete Hessian ``H_h(x; 1)``.  ``power=2`` divides
    by one extra ``h``; it has the same roots.
    """
    dE = lambda t: t**3 - t
    return (dE(x + h) - dE(x - h)) / (2.0 * h**power)


def doublewell_turning_points(h, xtol=1e-12):
    """Roots ``(t_minus, t_plus)`` of the double-well dimer curvature."""
    f = lambda t: doublewell_curvature(t, h)
    lo, hi = 0.0, 1.0
    if not f(lo) < 0.0 < f(hi):
        raise RootBracketFailure(f"no sign change of the curvature on [0, 1] for h={h}")
    t_plus = bisect(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return -t_plus, t_plus


def morse_pair(r, a):
    """Morse pair energy ``V(r)`` and derivative ``V'(r)`` (unit well depth, r0 = 1)."""
    e = np.exp(-a * (r - 1.0))
    return e * e - 2.0 * e, -2.0 * a * (e * e - e)


def _triangular_lattice(radius):
    m = int(np.ceil(2.0 * radius)) + 2
    i, j = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1))
    pts = np.column_stack([(i + 0.5 * j).ravel(), (j * np.sqrt(3.0) / 2.0).ravel()])
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-9]


class MorseVacancy(EnergyModel):
    """Vacancy in a 2D triangular Morse crystal with a fixed far field.

    The degrees of freedom are the interleaved coordinates
    ``(x_0, y_0, x_1, y_1, ...)`` of the free atoms.
    """

    name = "morse_vacancy"

    def __init__(self, positions, free_index, a=4.0, moved_atom=None):
        positions = np.array(positions, dtype=float)
        free_index = np.asarray(free_index, dtype=np.int64)
        if free_index.size == 0:
            raise EmptyFreeSet("no free atoms")
        super().__init__(2 * free_index.size)
        self.a = float(a)
        positions.setflags(write=False)
        self._positions = positions
        self.free_index = free_index
        self.fixed_mask = np.ones(len(positions), dtype=bool)
        self.fixed_mask[free_index] = False
        self.moved_atom = moved_atom
        self._iu = np.triu_indices(len(positions), k=1)
        # fixed-fixed pairs never change; drop them from the sums
        keep = ~(self.fixed_mask[self._iu[0]] & self.fixed_mask[self._iu[1]])
        self._pi, self._pj = self._iu[0][keep], self._iu[1][keep]
        r = np.linalg.norm(positions[self._iu[0][~keep]] - positions[self._iu[1][~keep]], axis=1)
        self._fixed_energy = float(morse_pair(r, self.a)[0].sum())

    @property
    def n_free(self):
        return self.free_index.size

    @property
    def reference_positions(self):
        return self._positions.copy()

    def x_initial(self):
        return self._positions[self.free_index].ravel().copy()

    def positions(self, x):
        pos = self._positions.copy()
        pos[self.free_index] = np.asarray(x, dtype=float).reshape(-1, 2)
        return pos

    def _pair_terms(self, x):
        pos = self.positions(x)
        d = pos[self._pi] - pos[self._pj]
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        V, dV = morse_pair(r, self.a)
        return pos, d, r, V, dV

    def _energy(self, x):
        return self._fixed_energy + self._pair_terms(x)[3].sum()

    def _gradient(self, x):
        pos, d, r, V, dV = self._pair_terms(x)
        f = (dV / r)[:, None] * d
        g = np.zeros_like(pos)
        np.add.at(g, self._pi, f)
        np.add.at(g, self._pj, -f)
        return g[self.free_index].ravel()

    def triangulation(self, x=None):
        pos = self._positions if x is None else self.positions(x)
        return delaunay(pos, self.fixed_mask)

    def metric_builder(self, kind):
        if kind == "identity":
            return lambda x: identity_metric(self.dim)
        if kind == "connectivity":
            return lambda x: connectivity_metric(self.triangulation(x))
        raise ValueError(f"{self.name} does not support the {kind!r} metric")

    def default_start(self):
        x0 = self.x_initial()
        v0 = np.zeros(self.dim)
        if self.moved_atom is not None:
            k = int(np.flatnonzero(self.free_index == self.moved_atom)[0])
            v0[2 * k] = 1.0
        else:
            v0[0] = 1.0
        return x0, v0


def build_morse_vacancy(r_total=None, r_free=None, a=4.0, displaced_fraction=0.5, n_free=None):
    """Vacancy configuration on a unit-spacing triangular lattice.

    The atom at the origin is removed and its neighbour at (1, 0) is moved
    ``displaced_fraction`` of the way into the vacancy.  Atoms within
    ``r_free`` of the hop midpoint (0.5, 0) are free.  Passing ``n_free``
    instead of ``r_free`` picks the smallest radius giving exactly that
    many free atoms; ``r_total`` then defaults to ``r_free + 3``.
    """
    center = np.array([0.5, 0.0])
    if n_free is not None:
        probe = _triangular_lattice(n_free + 10.0)
        probe = probe[np.linalg.norm(probe, axis=1) > 1e-9]
        dist = np.sort(np.linalg.norm(probe - center, axis=1))
        if n_free < 1 or n_free >= len(dist) or dist[n_free - 1] + 1e-6 >= dist[n_free]:
            raise EmptyFreeSet(f"no free radius gives exactly {n_free} free atoms")
        r_free = 0.5 * (dist[n_free - 1] + dist[n_free])
    if r_free is None:
        raise ValueError("give r_free or n_free")
    if r_total is None:
        r_total = r_free + 3.0
    if not r_total > r_free > 1.0:
        raise ValueError("need r_total > r_free > 1")
    pts = _triangular_lattice(r_total)
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
    moved = int(np.argmin(np.linalg.norm(pts - [1.0, 0.0], axis=1)))
    pts[moved] = (1.0 - displaced_fraction) * pts[moved]
    free = np.flatnonzero(np.linalg.norm(pts - center, axis=1) <= r_free)
    if free.size == 0:
        raise EmptyFreeSet(f"r_free={r_free} leaves no free atoms")
    if moved not in free:
        moved = None
    return MorseVacancy(pts, free, a=a, moved_atom=moved)


def morse_cluster(n_free, a=4.0, displaced_fraction=0.5, r_total=4.0):
    """Small vacancy instance with exactly ``n_free`` free atoms.

    Unlike ``build_morse_vacancy`` the free set need not be a disc: the
    ``n_free`` atoms closest to the hop midpoint are freed, ties broken by
    atom index.  Meant for dense checks (e.g. a 12-DOF instance).
    """
    full = build_morse_vacancy(r_total=r_total, r_free=r_total - 1e-9, a=a,
                               displaced_fraction=displaced_fraction)
    pos = full.reference_positions
    if not 1 <= n_free < len(pos):
        raise EmptyFreeSet(f"need 1 <= n_free < {len(pos)}")
    dist = np.round(np.linalg.norm(pos - [0.5, 0.0], axis=1), 9)
    order = np.lexsort((np.arange(len(pos)), dist))
    free = np.sort(order[:n_free])
    moved = full.moved_atom if full.moved_atom in free else None
    return MorseVacancy(pos, free, a=a, moved_atom=moved)


class PhaseField(EnergyModel):
    """P1 Allen-Cahn type energy on the unit square with Dirichlet data.

    ``E(u) = s * [eps/2 U^T K U + 1/(2 eps) sum_i m_i (u_i^2 - 1)^2]`` where
    ``U`` is ``u`` on the free nodes extended by the boundary values, ``K``
    the P1 stiffness matrix and ``m`` the lumped nodal masses.

    ``scaling="nodal"`` (default) takes ``s = 1/dx**2``, i.e. the energy per
    unit cell, so that the stabilized Laplacian metric becomes
    ``eps * Delta_h + (1/eps) * I`` with ``Delta_h`` the five-point nodal
    Laplacian; ``scaling="fe"`` keeps ``s = 1``.  Only the identity metric
    sees the difference: the stabilized-Laplacian dynamics are invariant
    under a common rescaling of energy and metric.
    """

    name = "phase_field"

    def __init__(self, n, epsilon=0.1, free_corners=False, scaling="nodal"):
        if scaling not in ("nodal", "fe"):
            raise ValueError(f"unknown scaling {scaling!r}")
        mesh = unit_square_mesh(n)
        p = mesh.points
        on_x1 = (p[:, 0] == 0.0) | (p[:, 0] == 1.0)
        on_x2 = (p[:, 1] == 0.0) | (p[:, 1] == 1.0)
        if free_corners:
            mesh.fixed_mask = on_x1 ^ on_x2
        self.mesh = mesh
        self.n = int(n)
        self.epsilon = float(epsilon)
        self.scaling = scaling
        self.dx = 1.0 / (n - 1)
        self.scale = self.dx**-2 if scaling == "nodal" else 1.0
        free = mesh.free_index
        fixed = np.flatnonzero(mesh.fixed_mask)
        super().__init__(free.size)
        # x1 in {0, 1} takes precedence at the corners
        self.boundary_values = np.where(on_x1[fixed], -1.0, 1.0)
        K = p1_stiffness(mesh)
        self._K_ff = K[free][:, free].tocsr()
        K_fb = K[free][:, fixed]
        self._Kg = K_fb @ self.boundary_values
        self._gKg = float(self.boundary_values @ (K[fixed][:, fixed] @ self.boundary_values))
        self._mass = p1_lumped_mass(mesh)[free]
        self._free = free
        self._fixed = fixed
        self._minima = {}
        self._metric = None

    def _energy(self, u):
        eps = self.epsilon
        quad = u @ (self._K_ff @ u) + 2.0 * (u @ self._Kg) + self._gKg
        return self.scale * (0.5 * eps * quad + (0.5 / eps) * (self._mass @ (u * u - 1.0) ** 2))

    def _gradient(self, u):
        eps = self.epsilon
        g = eps * (self._K_ff @ u + self._Kg) + (2.0 / eps) * self._mass * u * (u * u - 1.0)
        return self.scale * g

    def nonlinear_energy(self, u):
        return self.scale * (0.5 / self.epsilon) * (self._mass @ (u * u - 1.0) ** 2)

    @property
    def metric(self):
        if self._metric is None:
            self._metric = stabilized_laplacian_metric(self.mesh, self.epsilon, self.scale)
        return self._metric

    def metric_builder(self, kind):
        if kind == "identity":
            return lambda x: identity_metric(self.dim)
        if kind == "stabilized_laplacian":
            return lambda x: self.metric
        raise ValueError(f"{self.name} does not support the {kind!r} metric")

    def find_minimum(self, sign=1, tol=1e-10, max_iter=10000):
        """Preconditioned steepest descent from the constant interior fill ``sign``."""
        sign = 1 if sign > 0 else -1
        if sign in self._minima:
            return self._minima[sign].copy()
        M = self.metric
        u = np.full(self.dim, float(sign))
        e = self._energy(u)
        alpha = 1.0
        for _ in range(max_iter):
            g = self._gradient(u)
            d = -M.solve(g)
            slope = g @ d
            if np.sqrt(-slope) <= tol:
                break
            alpha = min(1.0, 2.0 * alpha)
            while True:
                trial = u + alpha * d
                e_trial = self._energy(trial)
                if e_trial <= e + 1e-4 * alpha * slope or alpha < 1e-12:
                    break
                alpha *= 0.5
            u, e = trial, e_trial
        self._minima[sign] = u
        return u.copy()

    def nodal_values(self, u):
        """Full nodal field with the boundary data inserted, shape (n, n) row-major in x2."""
        U = np.empty(self.mesh.n_points)
        U[self._free] = u
        U[self._fixed] = self.boundary_values
        return U.reshape(self.n, self.n)

    def write_grid(self, u, path):
        np.savetxt(path, self.nodal_values(u), fmt="%.17g")

    def initial_state(self, seed=0, delta=1e-2, sign=1):
        """Perturbed minimum and orientation ``M^{-1} 1`` normalised in M.

        The perturbation is uniform in ``[-delta, delta]`` per node.  Its sign
        is flipped if needed so that its component along ``v0`` points toward
        the opposite minimum: near a minimum the dimer climbs along ``v0`` in
        whichever direction it is displaced, and only one side has a saddle.
        """
        rng = np.random.default_rng(seed)
        sign = 1 if sign > 0 else -1
        M = self.metric
        v0 = M.solve(np.ones(self.dim))
        v0 = v0 / M.norm(v0)
        d = rng.uniform(-delta, delta, self.dim)
        if sign * M.inner(v0, d) > 0:
            d = -d
        return self.find_minimum(sign) + d, v0

    def default_start(self):
        return self.initial_state()


def build_phase_field(n, epsilon=0.1, free_corners=False, scaling="nodal"):
    if n < 3:
        raise ValueError("need n >= 3")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return PhaseField(n, epsilon, free_corners, scaling)


PROBLEMS = {
    "quartic2d": "E(x,y) = (x^2-1)^2 + y^2, saddle at the origin",
    "doublewell1d": "E(x) = (1-x^2)^2/4, saddle at 0",
    "asymwell1d": "E(x) = x^4/4 - x^2/2 + c x^3, saddle at 0",
    "morse_vacancy": "vacancy hop in a 2D triangular Morse lattice",
    "phase_field": "P1 phase field on the unit square with mixed Dirichlet data",
}
