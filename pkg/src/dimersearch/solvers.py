"""Variable-metric dimer solvers.

Three drivers share the same building blocks:

* ``run_simple_dimer``          fixed steps in both orientation and position,
* ``run_exact_rotation_dimer``  (near) exact rotation, then a fixed translation step,
* ``run_linesearch_dimer``      Armijo rotation on the metric sphere plus an
  Armijo linesearch on the local merit function ``F_k``.

All of them spend exactly two gradient calls per dimer evaluation and report
work through ``SolveOutcome.trace``.
"""

import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core import (
    DimerState,
    dimer_energy,
    evaluate_dimer,
    rotation_direction,
    rotation_residual,
    translation_residual,
)
from .errors import NonFiniteValue, RotationStall
from .metrics import as_policy

__all__ = [
    "SolverConfig",
    "Status",
    "IterationRecord",
    "SolveOutcome",
    "MeritAnchor",
    "rotate",
    "merit_value",
    "merit_gradient",
    "dimer_direction",
    "gamma_step_heuristic",
    "run_simple_dimer",
    "run_exact_rotation_dimer",
    "run_linesearch_dimer",
]

_EPS = np.finfo(float).eps


@dataclass
class SolverConfig:
    h: float = 1e-3
    tol_x: float = 1e-5
    tol_v: float = 1e-1
    theta: float = math.sqrt(0.1)
    psi: float = 100.0
    alpha_max: float = 1.0
    beta_max: float = 1.0
    alpha0: float = 0.5
    beta0: float = 0.5
    max_iters: int = 10000
    max_gradient_calls: int = 1000000
    alpha_min_factor: float = 1e-14
    use_gamma_heuristic: bool = False
    rotation_max_steps: int = 1000
    divergence_radius: float = 1e6
    residual_cap: float = 1e10
    exact_rotation_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.psi > 1.0:
            raise ValueError("psi must exceed 1")
        if min(self.h, self.tol_x, self.tol_v, self.beta_max, self.beta0) <= 0:
            raise ValueError("h, tolerances and rotation steps must be positive")
        if not self.alpha_max >= self.alpha0 > 0.0:
            raise ValueError("need alpha_max >= alpha0 > 0")
        if self.max_iters < 0 or self.max_gradient_calls < 0 or self.rotation_max_steps < 0:
            raise ValueError("iteration budgets must be non-negative")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    MAX_GRADIENT_CALLS = "MaxGradientCalls"
    LINESEARCH_STAGNATION = "LinesearchStagnation"
    DIVERGED = "Diverged"
    ZERO_TRANSLATION_GRADIENT = "ZeroTranslationGradient"

    def __str__(self):
        return self.value


@dataclass
class IterationRecord:
    k: int
    n_gradient_calls: int
    dimer_energy: float
    res_x: float
    res_v: float
    alpha: float
    beta: float
    n_rotation_steps: int


TRACE_HEADER = "iter,n_grad,dimer_energy,res_x,res_v,alpha,beta,n_rot"


@dataclass
class SolveOutcome:
    status: Status
    final_state: DimerState
    trace: list = field(default_factory=list)
    n_gradient_calls: int = 0
    n_energy_calls: int = 0
    res_x: float = math.nan
    res_v: float = math.nan
    message: str = ""

    @property
    def converged(self):
        return self.status == Status.CONVERGED

    @property
    def iterations(self):
        return self.trace[-1].k if self.trace else 0

    def trace_csv(self):
        lines = [TRACE_HEADER]
        for r in self.trace:
            lines.append(
                f"{r.k},{r.n_gradient_calls},{r.dimer_energy!r},{r.res_x!r},{r.res_v!r},"
                f"{r.alpha!r},{r.beta!r},{r.n_rotation_steps}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# rotation


def _endpoint_energies(model, x, v, h):
    with np.errstate(over="ignore", invalid="ignore"):
        ep = model.energy(x + h * v)
        em = model.energy(x - h * v)
    if not (np.isfinite(ep) and np.isfinite(em)):
        raise NonFiniteValue("energy", "x+hv" if not np.isfinite(ep) else "x-hv")
    return 0.5 * (ep + em), 64.0 * _EPS * max(abs(ep), abs(em))


def _curvature_floor(ev):
    """Rounding level of ``ev.lam`` (difference quotient of two gradients)."""
    g_scale = np.linalg.norm(ev.gx) + np.linalg.norm(ev.gv) / ev.h
    return 128.0 * _EPS * g_scale * np.linalg.norm(ev.v) / ev.h


def _rotate(model, x, v, metric, beta, tol, cfg, ev=None):
    """Armijo steepest descent for the orientation on the metric unit sphere.

    Returns ``(v, beta, ev, n_steps)`` where ``ev`` is the dimer evaluation
    at the returned orientation.  The sufficient-decrease test uses, in
    order of preference, whichever quantity can still resolve the required
    decrease in floating point:

    1. the dimer energy,
    2. the curvature ``v . H_h v / 2`` (ties to the energy up to O(h^2)),
    3. plain decrease of the projected residual.
    """
    h = cfg.h
    if ev is None:
        ev = evaluate_dimer(model, DimerState(x, v, h))
    beta_floor = cfg.alpha_min_factor * cfg.beta_max
    e_v = floor = None
    n_steps = 0
    while True:
        s = -rotation_direction(ev.hv, v, metric)
        t = metric.norm(s)
        if t <= tol:
            return v, beta, ev, n_steps
        if n_steps >= cfg.rotation_max_steps:
            raise RotationStall(
                f"rotation residual {t:.3e} > {tol:.3e} after {n_steps} steps", v, beta, ev
            )
        beta = min(cfg.beta_max, 2.0 * beta)
        lam_floor = _curvature_floor(ev)
        while True:
            v_b = math.cos(t * beta) * v + (math.sin(t * beta) / t) * s
            v_b = v_b / metric.norm(v_b)
            required = cfg.theta * beta * t * t
            if e_v is None:
                e_v, floor = _endpoint_energies(model, x, v, h)
            ev_b = e_b = None
            if required * h * h > floor:
                try:
                    e_b = dimer_energy(model, x, v_b, h)
                except NonFiniteValue:
                    e_b = math.inf
                ok = e_b <= e_v - required * h * h
            else:
                ev_b = evaluate_dimer(model, DimerState(x, v_b, h))
                if required > lam_floor:
                    ok = 0.5 * (ev_b.lam - ev.lam) <= -required
                else:
                    ok = metric.norm(rotation_direction(ev_b.hv, v_b, metric)) < t
            if ok:
                break
            beta *= 0.5
            if beta < beta_floor:
                raise RotationStall(
                    f"rotation step underflow at residual {t:.3e}", v, beta, ev
                )
        if ev_b is None:
            ev_b = evaluate_dimer(model, DimerState(x, v_b, h))
        v, ev = v_b, ev_b
        e_v = e_b
        if e_v is None:
            floor = None
        n_steps += 1


def rotate(model, x, v, metric, beta_in, tol, cfg=None):
    """Rotate ``v`` towards the lowest-curvature direction at ``x``.

    Returns ``(v_out, beta_out)`` with ``v_out`` M-unit and its projected
    curvature residual at most ``tol``.  Raises RotationStall when
    ``cfg.rotation_max_steps`` is exceeded or the step underflows.
    """
    cfg = cfg or SolverConfig()
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / metric.norm(v)
    v_out, beta_out, _, _ = _rotate(model, x, v, metric, beta_in, tol, cfg)
    return v_out, beta_out


# ---------------------------------------------------------------------------
# merit function


@dataclass
class MeritAnchor:
    """Data frozen at the iterate ``x_k``: orientation, averaged gradient, curvature."""

    x: np.ndarray
    v: np.ndarray
    gx: np.ndarray
    lam: float
    h: float

    @classmethod
    def from_evaluation(cls, ev):
        return cls(ev.x, ev.v, ev.gx, ev.lam, ev.h)


def merit_value(model, x, anchor, metric):
    """``F_k(x) = E_h(x, v_k) - 2 (v_k.gx_k) <v_k, x-x_k>_M - lam_k <v_k, x-x_k>_M^2``."""
    x = np.asarray(x, dtype=float)
    e = dimer_energy(model, x, anchor.v, anchor.h)
    return e + _merit_correction(x, anchor, metric)


def _merit_correction(x, anchor, metric):
    c = metric.inner(anchor.v, x - anchor.x)
    return -2.0 * float(anchor.v @ anchor.gx) * c - anchor.lam * c * c


def merit_gradient(model, x, anchor, metric):
    """l2 gradient of ``merit_value`` (two gradient calls)."""
    x = np.asarray(x, dtype=float)
    ev = evaluate_dimer(model, DimerState(x, anchor.v, anchor.h))
    c = metric.inner(anchor.v, x - anchor.x)
    Mv = metric.apply(anchor.v)
    return ev.gx - 2.0 * (float(anchor.v @ anchor.gx) + anchor.lam * c) * Mv


def dimer_direction(gx, v, metric):
    """Preconditioned dimer translation direction ``-(M^{-1} - 2 v v^T) gx``."""
    return -(metric.solve(gx) - 2.0 * v * (v @ gx))


def gamma_step_heuristic(history, alpha_prev, alpha_max):
    """Initial linesearch step from the last few ``(p_M, p_I)`` direction pairs.

    ``history[j]`` is the pair of iteration ``j + 1``; with ``k = len(history)``
    the ratios ``gamma_j = (p_M . p_I)_{j-1} / (p_M . p_I)_j`` for
    ``j = max(2, k-4) .. k`` are averaged.
    """
    fallback = min(alpha_max, 2.0 * alpha_prev)
    k = len(history)
    if k < 2:
        return fallback
    dots = [float(np.dot(pm, pi)) for pm, pi in history]
    gammas = []
    for j in range(max(2, k - 4), k + 1):
        den = dots[j - 1]
        if den == 0.0:
            return fallback
        gammas.append(dots[j - 2] / den)
    return min(float(np.mean(gammas)), 2.0 * alpha_prev, alpha_max)


# ---------------------------------------------------------------------------
# drivers


class _Run:
    """Bookkeeping shared by the drivers: counters, trace, termination."""

    def __init__(self, model, x0, cfg):
        self.model = model
        self.cfg = cfg
        self.x0 = np.array(x0, dtype=float)
        self.g0 = model.n_gradient_calls
        self.e0 = model.n_energy_calls
        self.trace = []

    @property
    def n_grad(self):
        return self.model.n_gradient_calls - self.g0

    def record(self, k, energy, res_x, res_v, alpha, beta, n_rot):
        self.trace.append(
            IterationRecord(k, self.n_grad, float(energy), float(res_x), float(res_v),
                            float(alpha), float(beta), int(n_rot))
        )

    def budget_status(self, k, x, res_x, res_v):
        cfg = self.cfg
        if not (np.isfinite(res_x) and np.isfinite(res_v)):
            return Status.DIVERGED
        if max(res_x, res_v) > cfg.residual_cap:
            return Status.DIVERGED
        if np.linalg.norm(x - self.x0) > cfg.divergence_radius:
            return Status.DIVERGED
        if k >= cfg.max_iters:
            return Status.MAX_ITERATIONS
        if self.n_grad >= cfg.max_gradient_calls:
            return Status.MAX_GRADIENT_CALLS
        return None

    def outcome(self, status, x, v, res_x=math.nan, res_v=math.nan, message=""):
        return SolveOutcome(
            status=status,
            final_state=DimerState(np.array(x, dtype=float), np.array(v, dtype=float), self.cfg.h),
            trace=self.trace,
            n_gradient_calls=self.n_grad,
            n_energy_calls=self.model.n_energy_calls - self.e0,
            res_x=float(res_x),
            res_v=float(res_v),
            message=message,
        )


def _unit(v, metric):
    nv = metric.norm(v)
    if not nv > 0:
        raise ValueError("orientation must be non-zero")
    return v / nv


def _safe_energy(model, x, v, h):
    try:
        return dimer_energy(model, x, v, h)
    except NonFiniteValue:
        return math.nan


def run_simple_dimer(model, x0, v0, metric_policy=None, cfg=None, alpha=0.1, beta=0.1,
                     callback=None):
    """Fixed-step dimer: one orientation step and one translation step per iteration.

    Stops when both the translation residual (``tol_x``) and the rotation
    residual (``tol_v``) pass, or with a failure status.  ``callback(k, x, v)``,
    if given, sees every iterate including the start.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    cfg = cfg or SolverConfig()
    policy = as_policy(model, metric_policy)
    run = _Run(model, x0, cfg)
    x = np.array(x0, dtype=float)
    M = policy.initial(x)
    v = _unit(np.array(v0, dtype=float), M)
    try:
        ev = evaluate_dimer(model, DimerState(x, v, cfg.h))
    except NonFiniteValue as exc:
        return run.outcome(Status.DIVERGED, x, v, message=str(exc))
    res_x = translation_residual(ev, M)
    res_v = rotation_residual(ev, v, M)
    run.record(0, _safe_energy(model, x, v, cfg.h), res_x, res_v, 0.0, 0.0, 0)
    if callback is not None:
        callback(0, x, v)
    k = 0
    try:
        while True:
            M_new = policy.update(x, M)
            if M_new is not M:
                M = M_new
                if abs(M.norm(v) - 1.0) > 1e-14:
                    v = _unit(v, M)
                    ev = evaluate_dimer(model, DimerState(x, v, cfg.h))
            res_x = translation_residual(ev, M)
            res_v = rotation_residual(ev, v, M)
            if res_x <= cfg.tol_x and res_v <= cfg.tol_v:
                return run.outcome(Status.CONVERGED, x, v, res_x, res_v)
            status = run.budget_status(k, x, res_x, res_v)
            if status is not None:
                return run.outcome(status, x, v, res_x, res_v)
            v_next = v + beta * rotation_direction(-ev.hv, v, M)
            x = x + alpha * dimer_direction(ev.gx, v, M)
            v = _unit(v_next, M)
            k += 1
            ev = evaluate_dimer(model, DimerState(x, v, cfg.h))
            run.record(k, _safe_energy(model, x, v, cfg.h), translation_residual(ev, M),
                       rotation_residual(ev, v, M), alpha, beta, 1)
            if callback is not None:
                callback(k, x, v)
    except NonFiniteValue as exc:
        return run.outcome(Status.DIVERGED, x, v, message=str(exc))


def run_exact_rotation_dimer(model, x0, metric_policy=None, cfg=None, alpha=0.1, v0=None,
                             callback=None):
    """Dimer with a (numerically) exact rotation before every fixed translation step.

    The rotation targets ``cfg.exact_rotation_tol``; if it stalls on
    rounding error with a residual already below ``cfg.tol_x`` the current
    orientation is kept, otherwise RotationStall propagates.
    ``callback(k, x, v)`` sees every iterate after its rotation.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    cfg = cfg or SolverConfig()
    policy = as_policy(model, metric_policy)
    run = _Run(model, x0, cfg)
    x = np.array(x0, dtype=float)
    M = policy.initial(x)
    v = _unit(np.ones(model.dim) if v0 is None else np.array(v0, dtype=float), M)
    beta = cfg.beta0
    k = 0
    ev = None
    try:
        while True:
            M_new = policy.update(x, M)
            if M_new is not M:
                M, ev = M_new, None
                v = _unit(v, M)
            if ev is None:
                ev = evaluate_dimer(model, DimerState(x, v, cfg.h))
            try:
                v, beta, ev, n_rot = _rotate(model, x, v, M, beta, cfg.exact_rotation_tol, cfg, ev)
            except RotationStall as stall:
                if rotation_residual(stall.evaluation, stall.v, M) > cfg.tol_x:
                    raise
                v, ev, n_rot = stall.v, stall.evaluation, -1
            res_x = translation_residual(ev, M)
            res_v = rotation_residual(ev, v, M)
            if callback is not None:
                callback(k, x, v)
            if k == 0:
                run.record(0, _safe_energy(model, x, v, cfg.h), res_x, res_v, 0.0, beta, n_rot)
            if res_x <= cfg.tol_x:
                return run.outcome(Status.CONVERGED, x, v, res_x, res_v)
            status = run.budget_status(k, x, res_x, res_v)
            if status is not None:
                return run.outcome(status, x, v, res_x, res_v)
            x = x + alpha * dimer_direction(ev.gx, v, M)
            k += 1
            ev = evaluate_dimer(model, DimerState(x, v, cfg.h))
            run.record(k, _safe_energy(model, x, v, cfg.h), translation_residual(ev, M),
                       rotation_residual(ev, v, M), alpha, beta, n_rot)
    except NonFiniteValue as exc:
        return run.outcome(Status.DIVERGED, x, v, message=str(exc))


def run_linesearch_dimer(model, x0, v0, metric_policy=None, cfg=None, callback=None):
    """Dimer with Armijo rotation and an Armijo linesearch on the merit function.

    Per iteration: refresh the metric, renormalise ``v``, rotate to tolerance
    ``max(res_x, tol_v)``, then backtrack along the preconditioned dimer
    direction until the merit function decreases sufficiently and the
    orientation residual at the trial point stays within ``psi`` times the
    current one.  ``callback(k, x, v)`` sees every iterate before its
    rotation, so the ``v`` reported at ``k + 1`` is the one used for step ``k``.
    """
    cfg = cfg or SolverConfig()
    policy = as_policy(model, metric_policy)
    run = _Run(model, x0, cfg)
    h = cfg.h
    x = np.array(x0, dtype=float)
    M = policy.initial(x)
    v = _unit(np.array(v0, dtype=float), M)
    try:
        ev = evaluate_dimer(model, DimerState(x, v, h))
    except NonFiniteValue as exc:
        return run.outcome(Status.DIVERGED, x, v, message=str(exc))
    run.record(0, _safe_energy(model, x, v, h), translation_residual(ev, M),
               rotation_residual(ev, v, M), 0.0, 0.0, 0)
    alpha = cfg.alpha0
    beta = cfg.beta0
    history = []
    k = 0
    res_x = res_v = math.nan
    try:
        while True:
            M_new = policy.update(x, M)
            if M_new is not M:
                M = M_new
            if abs(M.norm(v) - 1.0) > 1e-14:
                v = _unit(v, M)
                ev = evaluate_dimer(model, DimerState(x, v, h))
            res_x = translation_residual(ev, M)
            res_v = rotation_residual(ev, v, M)
            if callback is not None:
                callback(k, x, v)
            if not np.any(ev.gx):
                return run.outcome(Status.ZERO_TRANSLATION_GRADIENT, x, v, res_x, res_v)
            if res_x <= cfg.tol_x:
                return run.outcome(Status.CONVERGED, x, v, res_x, res_v)
            status = run.budget_status(k, x, res_x, res_v)
            if status is not None:
                return run.outcome(status, x, v, res_x, res_v)

            v, beta, ev, n_rot = _rotate(model, x, v, M, beta, max(res_x, cfg.tol_v), cfg, ev)
            anchor = MeritAnchor.from_evaluation(ev)
            f0 = dimer_energy(model, x, v, h)
            p = dimer_direction(ev.gx, v, M)
            pMp = M.inner(p, p)
            res_v_pre = rotation_residual(ev, v, M)
            guard = cfg.psi * max(res_v_pre, 1e-12 * (1.0 + abs(ev.lam)))
            history.append((p, -(ev.gx - 2.0 * v * (v @ ev.gx))))
            if cfg.use_gamma_heuristic:
                alpha = gamma_step_heuristic(history, alpha, cfg.alpha_max)
            else:
                alpha = min(cfg.alpha_max, 2.0 * alpha)

            while True:
                trial = x + alpha * p
                try:
                    e_t = dimer_energy(model, trial, v, h)
                    f_t = e_t + _merit_correction(trial, anchor, M)
                    ok = f_t <= f0 - cfg.theta * alpha * pMp
                    if ok:
                        ev_t = evaluate_dimer(model, DimerState(trial, v, h))
                        ok = rotation_residual(ev_t, v, M) <= guard
                except NonFiniteValue:
                    ok = False
                if ok:
                    break
                alpha *= 0.5
                if alpha < cfg.alpha_min_factor * cfg.alpha_max:
                    return run.outcome(Status.LINESEARCH_STAGNATION, x, v, res_x, res_v)
            x, ev = trial, ev_t
            k += 1
            run.record(k, e_t, translation_residual(ev, M), rotation_residual(ev, v, M),
                       alpha, beta, n_rot)
    except NonFiniteValue as exc:
        return run.outcome(Status.DIVERGED, x, v, res_x, res_v, message=str(exc))
