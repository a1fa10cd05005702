"""Independent reference computations for checking the dimer solvers.

Everything here works with dense matrices and is meant for small problems
(``dim <= 1000``): finite-difference Hessians, symmetric eigenpairs, Newton
solves of the dimer-saddle and critical-point equations, and h-sweeps of
the distance between the dimer saddle and the exact saddle.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergence

__all__ = [
    "EigPair",
    "DimerSaddle",
    "ExactSaddle",
    "HGapStudy",
    "dense_hessian",
    "min_eigpair",
    "dimer_saddle_residual",
    "newton_dimer_saddle",
    "exact_saddle",
    "h_gap_study",
    "loglog_slope",
]

MAX_DENSE_DIM = 1000


@dataclass
class EigPair:
    lam: float
    v: np.ndarray
    second: float = np.nan

    @property
    def is_index_one(self):
        return self.lam < 0.0 < self.second


@dataclass
class DimerSaddle:
    x_h: np.ndarray
    v_h: np.ndarray
    lambda_h: float
    residual: float
    iterations: int = 0


@dataclass
class ExactSaddle:
    x: np.ndarray
    eig: EigPair
    index_one: bool
    residual: float


def _orient(v):
    """Sign convention: the largest-magnitude component is positive."""
    i = int(np.argmax(np.abs(v)))
    return v if v[i] >= 0 else -v


def dense_hessian(model, x, fd_step=1e-5):
    """Central-difference Hessian of ``model`` at ``x``, symmetrised."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n > MAX_DENSE_DIM:
        raise ValueError(f"dense Hessian limited to dim <= {MAX_DENSE_DIM}")
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = fd_step
        H[:, j] = (model.gradient(x + e) - model.gradient(x - e)) / (2.0 * fd_step)
    return 0.5 * (H + H.T)


def min_eigpair(H):
    """Smallest eigenvalue of a symmetric matrix and its unit eigenvector.

    ``second`` holds the next eigenvalue (NaN for 1x1), which is what the
    index-1 classification needs.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    second = float(w[1]) if w.size > 1 else np.nan
    return EigPair(float(w[0]), _orient(V[:, 0]), second)


def dimer_saddle_residual(model, x, v, lam, h):
    """Stacked residual of the dimer-saddle equations.

    Rows: averaged gradient; ``H_h v - lam v``; ``(|v|^2 - 1) / 2``.
    """
    gp = model.gradient(x + h * v)
    gm = model.gradient(x - h * v)
    return np.concatenate(
        [0.5 * (gp + gm), (gp - gm) / (2.0 * h) - lam * v, [0.5 * (v @ v - 1.0)]]
    )


def _newton(fun, z0, tol, max_iter, fd_step):
    z = np.array(z0, dtype=float)
    r = fun(z)
    res = np.linalg.norm(r)
    best = res
    stalled = 0
    for it in range(max_iter):
        if res <= tol:
            return z, res, it
        n = z.size
        J = np.empty((r.size, n))
        for j in range(n):
            step = fd_step * max(1.0, abs(z[j]))
            zj = z.copy()
            zj[j] += step
            J[:, j] = (fun(zj) - r) / step
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular Jacobian: {exc}") from exc
        z = z + dz
        r = fun(z)
        res = np.linalg.norm(r)
        if not np.isfinite(res):
            raise NewtonDivergence("non-finite residual")
        if res < best * (1.0 - 1e-3):
            best, stalled = res, 0
        else:
            stalled += 1
            # rounding floor reached: no further reduction is possible
            if stalled >= 3 and res <= 1e-10:
                return z, res, it + 1
            if stalled >= 10:
                break
    if res <= tol:
        return z, res, max_iter
    raise NewtonDivergence(f"Newton stopped at residual {res:.3e} > {tol:.3e}")


def newton_dimer_saddle(model, x0, v0, h, tol=1e-12, max_iter=50, fd_step=1e-6):
    """Newton iteration on the dimer-saddle system in ``(x, v, lam)``.

    The Jacobian is built by forward differences of the residual.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    v0 = v0 / np.linalg.norm(v0)
    n = x0.size
    g = (model.gradient(x0 + h * v0) - model.gradient(x0 - h * v0)) / (2.0 * h)
    z0 = np.concatenate([x0, v0, [v0 @ g]])

    def fun(z):
        return dimer_saddle_residual(model, z[:n], z[n : 2 * n], z[-1], h)

    z, res, it = _newton(fun, z0, tol, max_iter, fd_step)
    v = z[n : 2 * n]
    v = v / np.linalg.norm(v)
    return DimerSaddle(z[:n].copy(), _orient(v), float(z[-1]), float(res), it)


def exact_saddle(model, x0, tol=1e-10, max_iter=50, fd_step=1e-5):
    """Newton on ``grad E = 0`` with the dense FD Hessian, then classify."""
    x = np.array(x0, dtype=float)
    res = np.linalg.norm(model.gradient(x))
    for _ in range(max_iter):
        if res <= tol:
            break
        H = dense_hessian(model, x, fd_step)
        try:
            x = x - np.linalg.solve(H, model.gradient(x))
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular Hessian: {exc}") from exc
        res = np.linalg.norm(model.gradient(x))
        if not np.isfinite(res):
            raise NewtonDivergence("non-finite gradient")
    if res > tol:
        raise NewtonDivergence(f"critical point Newton stopped at |grad E| = {res:.3e}")
    eig = min_eigpair(dense_hessian(model, x, fd_step))
    index_one = eig.lam < 0.0 and (x.size == 1 or eig.second > 0.0)
    return ExactSaddle(x, eig, bool(index_one), float(res))


def loglog_slope(hs, values):
    """Least-squares slope of ``log(values)`` against ``log(hs)``."""
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


@dataclass
class HGapStudy:
    h: np.ndarray
    gap: np.ndarray
    x_gap: np.ndarray
    v_gap: np.ndarray
    lambda_gap: np.ndarray
    slope: float

    def rows(self):
        return list(zip(self.h.tolist(), self.gap.tolist()))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "gap", "x_gap", "v_gap", "lambda_gap", "slope"])
            for i in range(self.h.size):
                w.writerow([repr(float(self.h[i])), repr(float(self.gap[i])),
                            repr(float(self.x_gap[i])), repr(float(self.v_gap[i])),
                            repr(float(self.lambda_gap[i])), repr(self.slope)])


def h_gap_study(model, x0, v0, h_list, tol=1e-12):
    """Distance between dimer saddles and the exact saddle over a sweep of ``h``.

    ``gap = |x_h - x_*| + |v_h - v_*| + |lam_h - lam_*|`` with ``v_h``
    sign-aligned to ``v_*``; the slope is the log-log least-squares fit
    over the strictly positive gaps (NaN if fewer than two).
    """
    star = exact_saddle(model, x0)
    v_star = star.eig.v
    hs, gaps, xg, vg, lg = [], [], [], [], []
    x_start, v_start = np.asarray(x0, dtype=float), np.asarray(v0, dtype=float)
    for h in h_list:
        ds = newton_dimer_saddle(model, x_start, v_start, h, tol=tol)
        v_h = ds.v_h if ds.v_h @ v_star >= 0 else -ds.v_h
        dx = float(np.linalg.norm(ds.x_h - star.x))
        dv = float(np.linalg.norm(v_h - v_star))
        dl = abs(ds.lambda_h - star.eig.lam)
        hs.append(float(h))
        xg.append(dx)
        vg.append(dv)
        lg.append(dl)
        gaps.append(dx + dv + dl)
        x_start, v_start = ds.x_h, v_h
    hs, gaps = np.array(hs), np.array(gaps)
    pos = gaps > 0
    slope = loglog_slope(hs[pos], gaps[pos]) if pos.sum() >= 2 else float("nan")
    return HGapStudy(hs, gaps, np.array(xg), np.array(vg), np.array(lg), slope)
