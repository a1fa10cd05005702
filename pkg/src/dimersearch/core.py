"""Dimer calculus: finite-difference energy, gradient and Hessian action.

A dimer is a pair of configurations ``x + h v`` and ``x - h v``.  From the
two endpoint gradients we obtain

* the averaged gradient  ``gx = (g(x+hv) + g(x-hv)) / 2``,
* the orientation gradient  ``gv = h/2 (g(x+hv) - g(x-hv))``,
* the discrete Hessian action  ``H_h v = gv / h**2``,

so one dimer evaluation costs exactly two gradient calls.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteValue

__all__ = [
    "EnergyModel",
    "QuadraticModel",
    "LinearModel",
    "DimerState",
    "DimerEvaluation",
    "dimer_energy",
    "evaluate_dimer",
    "translation_residual",
    "rotation_residual",
    "rotation_direction",
]


class EnergyModel:
    """Base class for energy landscapes ``E : R^N -> R``.

    Subclasses implement ``_energy`` and ``_gradient`` (the l2 gradient).
    The public ``energy`` / ``gradient`` wrappers count calls; solvers report
    work as differences of these counters.  Counters are plain integers, so
    a single instance should not be shared between threads.
    """

    name = "model"

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.n_energy_calls = 0
        self.n_gradient_calls = 0

    def _energy(self, x):
        raise NotImplementedError

    def _gradient(self, x):
        raise NotImplementedError

    def energy(self, x):
        self.n_energy_calls += 1
        return float(self._energy(np.asarray(x, dtype=float)))

    def gradient(self, x):
        self.n_gradient_calls += 1
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)

    def reset_counters(self):
        self.n_energy_calls = 0
        self.n_gradient_calls = 0

    # Hooks used by the solvers and the CLI; problems override what they support.

    def metric_builder(self, kind):
        """Return ``f(x) -> Metric`` for a metric kind, or raise ValueError."""
        if kind == "identity":
            from .metrics import identity_metric

            return lambda x: identity_metric(self.dim)
        raise ValueError(f"{self.name} does not support the {kind!r} metric")

    def reference_saddle(self):
        """Known index-1 saddle of ``E`` or None."""
        return None


class QuadraticModel(EnergyModel):
    """``E(x) = x^T A x / 2 + b^T x``; finite differences are exact on it."""

    name = "quadratic"

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(A.shape[0])
        self.A = 0.5 * (A + A.T)
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)

    def _energy(self, x):
        return 0.5 * x @ self.A @ x + self.b @ x

    def _gradient(self, x):
        return self.A @ x + self.b


class LinearModel(EnergyModel):
    name = "linear"

    def __init__(self, g):
        g = np.asarray(g, dtype=float)
        super().__init__(g.size)
        self.g = g

    def _energy(self, x):
        return self.g @ x

    def _gradient(self, x):
        return self.g.copy()


@dataclass
class DimerState:
    x: np.ndarray
    v: np.ndarray
    h: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.h <= 0:
            raise ValueError("dimer length h must be positive")
        if self.x.shape != self.v.shape:
            raise ValueError("x and v must have the same shape")


@dataclass
class DimerEvaluation:
    """One dimer force call at ``(x, v, h)``.

    ``lam`` is ``v . gv / h**2`` with the plain l2 dot product.
    """

    x: np.ndarray
    v: np.ndarray
    h: float
    gx: np.ndarray
    gv: np.ndarray
    hv: np.ndarray
    lam: float
    n_gradient_calls: int = 2

    @property
    def state(self):
        return DimerState(self.x, self.v, self.h)


def _check_finite(value, what, where):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(what, where)


def dimer_energy(model, x, v, h):
    """Return ``(E(x + h v) + E(x - h v)) / 2``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if h <= 0:
        raise ValueError("h must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        e_plus = model.energy(x + h * v)
        e_minus = model.energy(x - h * v)
    _check_finite(e_plus, "energy", "x+hv")
    _check_finite(e_minus, "energy", "x-hv")
    return 0.5 * (e_plus + e_minus)


def evaluate_dimer(model, state):
    x, v, h = state.x, state.v, state.h
    with np.errstate(over="ignore", invalid="ignore"):
        g_plus = model.gradient(x + h * v)
        g_minus = model.gradient(x - h * v)
    _check_finite(g_plus, "gradient", "x+hv")
    _check_finite(g_minus, "gradient", "x-hv")
    gx = 0.5 * (g_plus + g_minus)
    gv = 0.5 * h * (g_plus - g_minus)
    hv = gv / h**2
    return DimerEvaluation(
        x=x.copy(), v=v.copy(), h=h, gx=gx, gv=gv, hv=hv, lam=float(v @ hv)
    )


def translation_residual(ev, metric):
    """``sqrt(gx^T M^{-1} gx)``, the dual norm of the averaged gradient."""
    gx = ev.gx
    return float(np.sqrt(max(gx @ metric.solve(gx), 0.0)))


def rotation_direction(hv, v, metric):
    """Metric-projected Hessian action ``M^{-1} g - v (v^T g)``.

    Its negative is the steepest descent direction for the orientation on
    the metric unit sphere; it is M-orthogonal to ``v`` whenever
    ``v^T M v = 1``.
    """
    return metric.solve(hv) - v * (v @ hv)


def rotation_residual(ev, v, metric):
    """M-norm of the projected discrete Hessian action at orientation ``v``."""
    s_raw = rotation_direction(ev.hv, v, metric)
    return float(np.sqrt(max(metric.inner(s_raw, s_raw), 0.0)))
