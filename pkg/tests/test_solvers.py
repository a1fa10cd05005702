import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimersearch.core import (
    DimerState,
    LinearModel,
    QuadraticModel,
    dimer_energy,
    evaluate_dimer,
    translation_residual,
)
from dimersearch.errors import RotationStall
from dimersearch.metrics import MatrixMetric, MetricPolicy, identity_metric
from dimersearch.oracle import dense_hessian, min_eigpair, newton_dimer_saddle
from dimersearch.problems import DoubleWell1D, Quartic2D, doublewell_turning_points, morse_cluster
from dimersearch.solvers import (
    MeritAnchor,
    SolverConfig,
    Status,
    dimer_direction,
    gamma_step_heuristic,
    merit_gradient,
    merit_value,
    rotate,
    run_exact_rotation_dimer,
    run_linesearch_dimer,
    run_simple_dimer,
)

X0 = np.array([0.2, 1.0])
V0 = np.array([1.0, 1.0]) / math.sqrt(2.0)


# config


def test_config_defaults():
    cfg = SolverConfig()
    assert (cfg.h, cfg.tol_x, cfg.tol_v, cfg.psi, cfg.alpha_max) == (1e-3, 1e-5, 1e-1, 100.0, 1.0)
    assert cfg.theta == pytest.approx(math.sqrt(0.1), rel=1e-15)
    assert cfg.alpha_min_factor == 1e-14 and not cfg.use_gamma_heuristic


@pytest.mark.parametrize("kw", [
    {"theta": 1.0}, {"theta": 0.0}, {"psi": 1.0}, {"tol_x": 0.0},
    {"alpha0": 2.0}, {"alpha0": 0.0}, {"h": -1e-3},
])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


# rotation


def test_rotate_already_converged_is_free():
    m = QuadraticModel(np.diag([-4.0, 2.0]))
    v, beta = rotate(m, [0.3, 0.1], [1.0, 0.0], identity_metric(2), 0.25, 1e-8)
    np.testing.assert_array_equal(v, [1.0, 0.0])
    assert beta == 0.25
    assert m.n_gradient_calls == 2 and m.n_energy_calls == 0


def test_rotate_quadratic_finds_min_eigenvector():
    m = QuadraticModel(np.diag([-4.0, 2.0]))
    v, _ = rotate(m, [0.7, -0.4], [math.cos(0.3), math.sin(0.3)], identity_metric(2), 0.5, 1e-8)
    assert abs(abs(v[0]) - 1.0) <= 1e-6 and abs(v[1]) <= 1e-6
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-12


def test_rotate_morse_matches_dense_eigenvector():
    m = morse_cluster(6)
    assert m.dim == 12
    x = m.x_initial()
    v, _ = rotate(m, x, m.default_start()[1], identity_metric(12), 0.5, 1e-8)
    eig = min_eigpair(dense_hessian(m, x))
    assert abs(v @ eig.v) >= 1 - 1e-4


def test_rotate_unit_in_metric():
    M = MatrixMetric(np.array([[2.0, 0.3], [0.3, 1.0]]))
    v, _ = rotate(Quartic2D(), [0.2, 0.4], [0.3, 1.0], M, 0.5, 1e-6)
    assert abs(M.norm(v) - 1.0) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(ang=st.floats(0.05, 3.0), x1=st.floats(-1.2, 1.2), x2=st.floats(-1.0, 1.0))
def test_rotation_descends(ang, x1, x2):
    m = Quartic2D()
    x = np.array([x1, x2])
    M = identity_metric(2)
    cfg = SolverConfig(rotation_max_steps=1)
    v = np.array([math.cos(ang), math.sin(ang)])
    e_in = dimer_energy(m, x, v, cfg.h)
    try:
        v1, _ = rotate(m, x, v, M, 0.5, 1e-12, cfg)
    except RotationStall as stall:
        v1 = stall.v
    e_out = dimer_energy(m, x, v1, cfg.h)
    assert e_out <= e_in + 64 * np.finfo(float).eps * max(1.0, abs(e_in))


def test_rotate_stall_carries_state():
    m = Quartic2D()
    cfg = SolverConfig(rotation_max_steps=0)
    with pytest.raises(RotationStall) as info:
        rotate(m, [0.2, 0.4], [0.3, 1.0], identity_metric(2), 0.5, 1e-8, cfg)
    assert info.value.v.shape == (2,)
    assert info.value.evaluation is not None


# merit function


def _anchor(model, x, v, h=1e-3):
    return MeritAnchor.from_evaluation(evaluate_dimer(model, DimerState(x, v, h)))


def test_merit_at_anchor_is_dimer_energy():
    m = Quartic2D()
    a = _anchor(m, X0, V0)
    assert merit_value(m, X0, a, identity_metric(2)) == dimer_energy(m, X0, V0, 1e-3)


def test_merit_double_well_turning_points():
    m = DoubleWell1D()
    h = 1e-3
    t_minus, t_plus = doublewell_turning_points(h)
    a = _anchor(m, [t_plus], [1.0], h)
    M = identity_metric(1)
    assert merit_value(m, [t_minus], a, M) < merit_value(m, [t_plus], a, M)


def _fd_gradient(f, x, step=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


@pytest.mark.parametrize("metric", [identity_metric(2), MatrixMetric([[2.0, 0.4], [0.4, 1.5]])])
def test_merit_gradient_fd(metric):
    m = Quartic2D()
    a = _anchor(m, X0, V0 / metric.norm(V0))
    x = X0 + np.array([0.05, -0.1])
    g = merit_gradient(m, x, a, metric)
    fd = _fd_gradient(lambda y: merit_value(m, y, a, metric), x)
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_merit_gradient_quadratic_at_anchor():
    A = np.array([[2.0, 0.5], [0.5, -1.0]])
    m = QuadraticModel(A, [0.3, 0.2])
    v = np.array([0.6, 0.8])
    a = _anchor(m, X0, v)
    g = merit_gradient(m, X0, a, identity_metric(2))
    np.testing.assert_allclose(g, (np.eye(2) - 2 * np.outer(v, v)) @ a.gx, rtol=1e-12)


@pytest.mark.parametrize("metric", [identity_metric(2), MatrixMetric([[2.0, 0.4], [0.4, 1.5]])])
def test_direction_identity(metric):
    m = Quartic2D()
    v = V0 / metric.norm(V0)
    ev = evaluate_dimer(m, DimerState(X0, v, 1e-3))
    a = MeritAnchor.from_evaluation(ev)
    lhs = metric.solve(merit_gradient(m, X0, a, metric))
    p = dimer_direction(ev.gx, v, metric)
    assert np.linalg.norm(lhs + p) <= 1e-12 * np.linalg.norm(p)


def test_merit_gradient_linear_model():
    g = np.array([1.0, -2.0, 0.5])
    m = LinearModel(g)
    v = np.array([0.0, 0.6, 0.8])
    a = _anchor(m, np.zeros(3), v)
    assert a.lam == 0.0
    out = merit_gradient(m, np.array([3.0, 1.0, -2.0]), a, identity_metric(3))
    np.testing.assert_allclose(out, g - 2 * (v @ g) * v, atol=1e-14)


# gamma heuristic


def test_gamma_heuristic_two_steps():
    hist = [(np.array([2.0]), np.array([1.0])), (np.array([0.5]), np.array([1.0]))]
    assert gamma_step_heuristic(hist, 10.0, 100.0) == pytest.approx(4.0)
    assert gamma_step_heuristic(hist, 1.0, 100.0) == 2.0
    assert gamma_step_heuristic(hist, 10.0, 3.0) == 3.0


def test_gamma_heuristic_fallbacks():
    assert gamma_step_heuristic([(np.ones(2), np.ones(2))], 0.3, 1.0) == pytest.approx(0.6)
    assert gamma_step_heuristic([], 0.8, 1.0) == 1.0
    zero = [(np.ones(2), np.ones(2)), (np.zeros(2), np.ones(2))]
    assert gamma_step_heuristic(zero, 0.2, 1.0) == pytest.approx(0.4)


def test_gamma_identity_metric_ratios_positive():
    rng = np.random.default_rng(0)
    hist = [(p, p) for p in rng.normal(size=(6, 3))]
    assert gamma_step_heuristic(hist, 1e3, 1e3) > 0


# simple dimer


def test_simple_dimer_quartic_converges():
    out = run_simple_dimer(Quartic2D(), X0, V0, alpha=0.1, beta=0.1)
    assert out.status == Status.CONVERGED
    assert np.linalg.norm(out.final_state.x) <= 1e-4


def test_simple_dimer_quartic_large_step_diverges():
    out = run_simple_dimer(Quartic2D(), X0, V0, alpha=0.5, beta=0.5)
    assert out.status == Status.DIVERGED


def test_simple_dimer_from_dimer_saddle():
    m = Quartic2D()
    sad = newton_dimer_saddle(m, [0.01, 0.01], [1.0, 0.0], 1e-3)
    out = run_simple_dimer(m, sad.x_h, sad.v_h, alpha=0.1, beta=0.1)
    assert out.converged and out.iterations <= 1


def test_simple_dimer_budget():
    out = run_simple_dimer(Quartic2D(), X0, V0, cfg=SolverConfig(max_iters=3))
    assert out.status == Status.MAX_ITERATIONS and out.iterations == 3


def test_simple_dimer_rejects_bad_steps():
    with pytest.raises(ValueError):
        run_simple_dimer(Quartic2D(), X0, V0, alpha=0.0)


# exact rotation dimer


def test_exact_rotation_contraction():
    m = Quartic2D()
    dist = []
    out = run_exact_rotation_dimer(m, np.array([0.2, 0.5]), alpha=0.1,
                                   callback=lambda k, x, v: dist.append(np.linalg.norm(x)))
    assert out.converged
    assert np.all(np.diff(dist) < 0)
    k = np.arange(len(dist))
    slope = np.polyfit(k, np.log(dist), 1)[0]
    assert slope < 0


def test_exact_rotation_from_saddle():
    m = Quartic2D()
    sad = newton_dimer_saddle(m, [0.01, 0.01], [1.0, 0.0], 1e-3)
    out = run_exact_rotation_dimer(m, sad.x_h, alpha=0.1, v0=sad.v_h)
    assert out.converged and out.iterations == 0


# linesearch dimer


def test_linesearch_quartic():
    m = Quartic2D()
    out = run_linesearch_dimer(m, X0, V0)
    assert out.converged and np.linalg.norm(out.final_state.x) <= 1e-4
    best_simple = min(
        run_simple_dimer(Quartic2D(), X0, V0, alpha=a, beta=a).n_gradient_calls
        for a in (0.1, 0.2, 0.3)
    )
    assert out.n_gradient_calls <= 5 * best_simple


def test_linesearch_zero_gradient():
    out = run_linesearch_dimer(Quartic2D(), [0.0, 0.0], [1.0, 0.0])
    assert out.status == Status.ZERO_TRANSLATION_GRADIENT


def test_linesearch_converged_state_reevaluates():
    m = Quartic2D()
    cfg = SolverConfig()
    out = run_linesearch_dimer(m, X0, V0, cfg=cfg)
    s = out.final_state
    ev = evaluate_dimer(Quartic2D(), DimerState(s.x, s.v, s.h))
    assert translation_residual(ev, identity_metric(2)) <= cfg.tol_x


def test_linesearch_accepted_steps_satisfy_armijo():
    m = Quartic2D()
    cfg = SolverConfig()
    M = identity_metric(2)
    iterates = []
    out = run_linesearch_dimer(m, X0, V0, cfg=cfg,
                               callback=lambda k, x, v: iterates.append((x.copy(), v.copy())))
    assert out.converged
    probe = Quartic2D()
    # the callback fires before rotation: step k uses the orientation reported at k + 1
    for (x, _), (x_next, v), rec in zip(iterates, iterates[1:], out.trace[1:]):
        ev = evaluate_dimer(probe, DimerState(x, v, cfg.h))
        a = MeritAnchor.from_evaluation(ev)
        p = dimer_direction(ev.gx, v, M)
        np.testing.assert_allclose(x_next, x + rec.alpha * p, rtol=1e-14, atol=1e-16)
        lhs = merit_value(probe, x_next, a, M)
        rhs = merit_value(probe, x, a, M) - cfg.theta * rec.alpha * (p @ p)
        assert lhs <= rhs


def test_linesearch_orientation_unit_and_trace_monotone():
    m = morse_cluster(6)
    x0, v0 = m.default_start()
    policy = MetricPolicy.for_model(m, "connectivity")
    norms = []
    M = policy.initial(x0)
    out = run_linesearch_dimer(m, x0, v0, policy,
                               callback=lambda k, x, v: norms.append(M.norm(v)))
    assert out.converged
    assert max(abs(n - 1.0) for n in norms[1:]) <= 1e-12
    calls = [r.n_gradient_calls for r in out.trace]
    assert all(b > a for a, b in zip(calls, calls[1:]))


def test_linesearch_gamma_heuristic_runs():
    out = run_linesearch_dimer(Quartic2D(), X0, V0, cfg=SolverConfig(use_gamma_heuristic=True))
    assert out.converged


def test_linesearch_max_gradient_calls():
    out = run_linesearch_dimer(Quartic2D(), X0, V0, cfg=SolverConfig(max_gradient_calls=5))
    assert out.status == Status.MAX_GRADIENT_CALLS


def test_trace_csv_shape():
    out = run_linesearch_dimer(Quartic2D(), X0, V0)
    lines = out.trace_csv().splitlines()
    assert lines[0] == "iter,n_grad,dimer_energy,res_x,res_v,alpha,beta,n_rot"
    assert len(lines) == len(out.trace) + 1
    assert all(len(ln.split(",")) == 8 for ln in lines)
