"""Self-checks bundled with the ``verify`` command.

Each check returns a ``CheckResult``; ``run_checks`` runs them all and never
raises, so one broken check cannot hide the others.
"""

from dataclasses import dataclass

import numpy as np

from .core import DimerState, QuadraticModel, evaluate_dimer
from .metrics import identity_metric
from .oracle import dense_hessian, h_gap_study, loglog_slope, min_eigpair
from .problems import (
    AsymmetricWell1D,
    DoubleWell1D,
    Quartic2D,
    build_phase_field,
    doublewell_turning_points,
    morse_cluster,
)
from .solvers import (
    MeritAnchor,
    SolverConfig,
    dimer_direction,
    merit_value,
    rotate,
    run_exact_rotation_dimer,
)

FD_STEPS = (0.1, 0.05, 0.025, 0.0125)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _quartic_hessian(x):
    return np.diag([12.0 * x[0] ** 2 - 4.0, 2.0])


def _doublewell_hessian(x):
    return np.array([[3.0 * x[0] ** 2 - 1.0]])


def gradient_consistency(model, points, step=1e-6):
    """Largest relative error of the gradient against central differences of the energy."""
    worst = 0.0
    for x in points:
        g = model.gradient(x)
        fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = step
            fd[i] = (model.energy(x + e) - model.energy(x - e)) / (2.0 * step)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0))
    return worst


def _small_models(rng):
    """Every problem at desk size, with 10 admissible sample points each."""
    quartic = Quartic2D()
    dw = DoubleWell1D()
    asym = AsymmetricWell1D(0.1)
    morse = morse_cluster(6)
    pf = build_phase_field(7, 0.1)
    return [
        ("quartic2d", quartic, [rng.uniform(-1.5, 1.5, 2) for _ in range(10)]),
        ("doublewell1d", dw, [rng.uniform(-1.5, 1.5, 1) for _ in range(10)]),
        ("asymwell1d", asym, [rng.uniform(-1.5, 1.5, 1) for _ in range(10)]),
        ("morse_vacancy", morse,
         [morse.x_initial() + rng.uniform(-0.1, 0.1, morse.dim) for _ in range(10)]),
        ("phase_field", pf, [rng.uniform(-1.0, 1.0, pf.dim) for _ in range(10)]),
    ]


def fd_error_slopes(model, hessian, x, v, hs=FD_STEPS):
    """Log-log slopes of the averaged-gradient and Hessian-action errors in ``h``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = model.gradient(x)
    Hv = hessian(x) @ v
    eg, eh = [], []
    for h in hs:
        ev = evaluate_dimer(model, DimerState(x, v, h))
        eg.append(np.linalg.norm(ev.gx - g))
        eh.append(np.linalg.norm(ev.hv - Hv))
    return loglog_slope(hs, eg), loglog_slope(hs, eh)


def quadratic_fd_error(seed=0, n=5):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    model = QuadraticModel(A + A.T, rng.normal(size=n))
    worst = 0.0
    for h in FD_STEPS:
        x, v = rng.normal(size=n), rng.normal(size=n)
        ev = evaluate_dimer(model, DimerState(x, v, h))
        worst = max(worst, np.abs(ev.gx - model.gradient(x)).max(),
                    np.abs(ev.hv - model.A @ v).max())
    return worst


def rotation_alignment(model, x, v0, tol=1e-8):
    """``(|cos angle|, |rayleigh gap|)`` between ``rotate`` and the dense eigensolver."""
    M = identity_metric(model.dim)
    cfg = SolverConfig()
    v, _ = rotate(model, x, v0, M, cfg.beta0, tol, cfg)
    H = dense_hessian(model, x)
    eig = min_eigpair(H)
    cos = abs(v @ eig.v) / np.linalg.norm(v)
    rq = (v @ H @ v) / (v @ v)
    return cos, abs(rq - eig.lam)


def cycling_witness(h=1e-3, theta=1e-3):
    """Merit values at the two discrete turning points of the double well.

    Returns ``(F(t_minus), F(t_plus), armijo_rhs)`` for the anchor at
    ``t_plus``; the full step to ``t_minus`` is admissible when
    ``F(t_minus) <= armijo_rhs``.
    """
    model = DoubleWell1D()
    t_minus, t_plus = doublewell_turning_points(h)
    M = identity_metric(1)
    ev = evaluate_dimer(model, DimerState(np.array([t_plus]), np.array([1.0]), h))
    anchor = MeritAnchor.from_evaluation(ev)
    p = dimer_direction(ev.gx, ev.v, M)
    alpha = (t_minus - t_plus) / p[0]
    f_plus = merit_value(model, [t_plus], anchor, M)
    f_minus = merit_value(model, [t_minus], anchor, M)
    return f_minus, f_plus, f_plus - theta * alpha * float(p @ p)


def contraction_profile(alpha=0.1, x0=(0.2, 1.0)):
    """Distances ``|x_k - x_h|`` of the exact-rotation dimer on the quartic (``x_h = 0``)."""
    model = Quartic2D()
    dist = []
    out = run_exact_rotation_dimer(
        model, np.array(x0), alpha=alpha,
        callback=lambda k, x, v: dist.append(float(np.linalg.norm(x))),
    )
    return out, np.array(dist)


def geometric_fit_r2(values):
    y = np.log(np.asarray(values))
    k = np.arange(y.size)
    coef = np.polyfit(k, y, 1)
    resid = y - np.polyval(coef, k)
    ss = np.sum((y - y.mean()) ** 2)
    return 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0


# ---------------------------------------------------------------------------


def _check_gradients():
    rng = np.random.default_rng(1)
    out = []
    for name, model, pts in _small_models(rng):
        err = gradient_consistency(model, pts)
        out.append(CheckResult(f"gradient consistency {name}", err <= 1e-6, f"rel err {err:.2e}"))
    return out


def _check_fd_slopes():
    out = []
    cases = [
        ("quartic2d", Quartic2D(), _quartic_hessian, [0.3, 0.4], [0.6, 0.8]),
        ("doublewell1d", DoubleWell1D(), _doublewell_hessian, [0.3], [1.0]),
    ]
    for name, model, hess, x, v in cases:
        sg, sh = fd_error_slopes(model, hess, x, v)
        ok = abs(sg - 2.0) <= 0.3 and abs(sh - 2.0) <= 0.3
        out.append(CheckResult(f"fd slopes {name}", ok, f"gradient {sg:.3f}, hessian {sh:.3f}"))
    err = quadratic_fd_error()
    out.append(CheckResult("fd exact on quadratics", err <= 1e-9, f"max err {err:.1e}"))
    return out


def _check_rotation():
    morse = morse_cluster(6)
    cases = [
        ("quartic2d", Quartic2D(), np.array([0.2, 0.3]), np.array([1.0, 1.0])),
        ("morse 12 dof", morse, morse.x_initial(), morse.default_start()[1]),
    ]
    out = []
    for name, model, x, v0 in cases:
        cos, gap = rotation_alignment(model, x, v0)
        out.append(CheckResult(f"rotation vs eigensolver {name}",
                               cos >= 1 - 1e-4 and gap <= 1e-4,
                               f"|cos| {cos:.8f}, rayleigh gap {gap:.1e}"))
    return out


def _check_hgap():
    study = h_gap_study(AsymmetricWell1D(0.1), [0.05], [1.0], [0.2, 0.1, 0.05, 0.025])
    return [CheckResult("h-gap slope asymwell1d", 1.7 <= study.slope <= 2.3,
                        f"slope {study.slope:.3f}")]


def _check_cycling():
    f_minus, f_plus, rhs = cycling_witness()
    return [CheckResult("double-well cycling witness", f_minus <= rhs < f_plus,
                        f"F(t-) {f_minus:.6f} <= {rhs:.6f}, F(t+) {f_plus:.6f}")]


def _check_contraction():
    out, dist = contraction_profile()
    mono = bool(np.all(np.diff(dist) < 0))
    r2 = geometric_fit_r2(dist)
    ok = out.converged and mono and r2 >= 0.99
    return [CheckResult("exact-rotation contraction quartic2d", ok,
                        f"{out.status.value}, monotone {mono}, R^2 {r2:.5f}")]


CHECKS = (_check_gradients, _check_fd_slopes, _check_rotation, _check_hgap,
          _check_cycling, _check_contraction)


def run_checks():
    results = []
    for check in CHECKS:
        try:
            results.extend(check())
        except Exception as exc:  # report, keep going
            results.append(CheckResult(check.__name__.lstrip("_"), False,
                                       f"{type(exc).__name__}: {exc}"))
    return results
