"""Gauss-Newton optimizer unit properties.

The three statistical/exactness properties here back the optimizer half of
the acceptance gate: unbiased curvature, one-step exactness on quadratics,
and a step subproblem that never increases the local model.
"""

import numpy as np
import pytest

from selfsim import gnopt as G
from selfsim import tape as T


def linear_view(A, b):
    """Residual view e = A theta - b as a traced function."""

    def fn(th):
        return T.add(T.matmul(A, th), -b)

    return fn


def test_rank1_increments_average_to_curvature():
    # mean over Rademacher draws of (J^T v)(J^T v)^T converges to J^T J at
    # the Monte Carlo rate; 1e5 draws land within 1% Frobenius
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 6))
    theta = rng.normal(size=6)
    fn = linear_view(A, np.zeros(12))
    tape, th, e = T.trace(fn, theta)
    draw_rng = np.random.Generator(np.random.PCG64(1))
    acc = np.zeros((6, 6))
    draws = 100_000
    for _ in range(draws):
        v = draw_rng.integers(0, 2, size=12).astype(float) * 2.0 - 1.0
        g = tape.vjp(e, v)[th.id]
        acc += np.outer(g, g)
    est = acc / draws
    exact = A.T @ A
    err = np.linalg.norm(est - exact) / np.linalg.norm(exact)
    assert err < 0.01


def test_ema_tracks_increment_mean():
    # the stored EMA with bias correction approaches the same limit
    rng = np.random.default_rng(1)
    A = rng.normal(size=(10, 5))
    state = G.new_state(5, seed=2)
    fn = linear_view(A, np.zeros(10))
    tape, th, e = T.trace(fn, rng.normal(size=5))
    for _ in range(3000):
        G.rank1_update(state, tape, th, e)
    exact = A.T @ A
    err = np.linalg.norm(state.curvature() - exact) / np.linalg.norm(exact)
    assert err < 0.2


def test_rank1_bias_correction():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(8, 4))
    state = G.new_state(4, seed=3)
    fn = linear_view(A, np.zeros(8))
    tape, th, e = T.trace(fn, rng.normal(size=4))
    for _ in range(2000):
        G.rank1_update(state, tape, th, e)
    est = state.curvature()
    exact = A.T @ A
    assert np.abs(est - exact).max() / np.abs(exact).max() < 0.2


def test_one_step_quadratic_convergence():
    # on an exact linear least-squares problem one accepted step lands on
    # the minimizer to solver precision
    rng = np.random.default_rng(4)
    A = rng.normal(size=(20, 7))
    b = rng.normal(size=20)
    theta = rng.normal(size=7)
    state = G.new_state(7, seed=5)
    state.gamma = 0.0  # undamped
    state.ema = A.T @ A  # exact curvature
    state.t = 1
    state.config = G.GNConfig(beta_ema=1.0, gamma_min=0.0)
    fn = linear_view(A, b)
    theta1, met = G.gn_step(state, theta, fn)
    opt = np.linalg.lstsq(A, b, rcond=None)[0]
    h1 = 0.5 * np.sum((A @ theta1 - b) ** 2)
    hopt = 0.5 * np.sum((A @ opt - b) ** 2)
    assert not met["rejected"]
    assert h1 - hopt <= 1e-12


@pytest.mark.parametrize("seed", range(8))
def test_two_by_two_never_increases_model(seed):
    # the (alpha, mu) solve returns a nonnegative predicted reduction for
    # random curvatures, gradients and stale momentum directions
    rng = np.random.default_rng(100 + seed)
    n = 9
    B = rng.normal(size=(n, n))
    exact = B.T @ B
    state = G.new_state(n, seed=seed)
    state.ema = exact + 0.1 * np.eye(n)
    state.t = 1
    state.config = G.GNConfig(beta_ema=1.0)
    state.gamma = 10.0 ** rng.uniform(-8, 2)
    state.delta_prev = rng.normal(size=n) * 10.0 ** rng.uniform(-6, 1)
    grad = rng.normal(size=n)

    def gprod(v):
        return exact @ v

    step, alpha, mu, pred = G.solve_and_coeffs(state, grad, gprod)
    assert pred >= 0.0
    # the returned step achieves that reduction in the damped model
    q = 0.5 * step @ (exact @ step + state.gamma * step) + grad @ step
    assert q <= 1e-10 * (1 + abs(pred))


def test_damping_schedule():
    cfg = G.GNConfig()
    assert G.adjust_damping(1.0, 0.9, cfg) == 1.0 / 1.5
    assert G.adjust_damping(1.0, 0.5, cfg) == 1.0
    assert G.adjust_damping(1.0, 0.1, cfg) == 1.5
    assert G.adjust_damping(1e-13, 0.9, cfg) == cfg.gamma_min
    assert G.adjust_damping(1e3, 0.0, cfg) == cfg.gamma_max


def test_rejection_raises_gamma_and_keeps_theta():
    # a view that explodes for any move forces rejection
    theta = np.zeros(2)

    def spike(th):
        v = th.value if isinstance(th, T.Var) else np.asarray(th)
        if np.any(v != 0.0):
            return np.full(3, 1e100)
        return T.add(T.mul(th, 1.0), np.ones(2)) if isinstance(th, T.Var) \
            else np.ones(2)

    state = G.new_state(2, seed=9)
    g0 = state.gamma
    theta1, met = G.gn_step(state, theta, spike)
    assert met["rejected"]
    np.testing.assert_array_equal(theta1, theta)
    assert state.gamma == g0 * state.config.reject_gamma


def test_gn_step_descends_on_rosenbrock_ls():
    # nonlinear residuals: e = (1-x, 10(y-x^2)); optimum at (1,1)
    def fn(th):
        x = T.slice_axis(th, 0, 0, 1)
        y = T.slice_axis(th, 0, 1, 2)
        r1 = T.add(T.neg(x), 1.0)
        r2 = T.mul(T.sub(y, T.mul(x, x)), 10.0)
        return T.concat([r1, r2], 0)

    theta = np.array([-1.2, 1.0])
    state = G.new_state(2, seed=11)
    losses = []
    for _ in range(60):
        theta, met = G.gn_step(state, theta, fn)
        losses.append(met["loss"])
    assert losses[-1] < 1e-8
    assert np.linalg.norm(theta - 1.0) < 1e-3


def test_zero_gradient_is_a_fixed_point():
    state = G.new_state(2, seed=12)

    def flat(th):
        return T.mul(th, 0.0)

    theta = np.ones(2)
    theta1, met = G.gn_step(state, theta, flat)
    np.testing.assert_array_equal(theta1, theta)
    assert met["grad_norm"] == 0.0


def test_adam_baseline_descends():
    rng = np.random.default_rng(13)
    A = rng.normal(size=(10, 4))
    b = rng.normal(size=10)
    fn = linear_view(A, b)
    theta = np.zeros(4)
    adam = G.new_adam(4, lr=0.05)
    first = None
    for _ in range(300):
        theta, met = G.baseline_step(adam, theta, fn)
        if first is None:
            first = met["loss"]
    assert met["loss"] < first
    opt = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.sum((A @ theta - b) ** 2) < 1.2 * np.sum((A @ opt - b) ** 2) + 1e-2


def test_state_seeding_reproducible():
    a = G.new_state(3, seed=7)
    b = G.new_state(3, seed=7)
    assert a.rng.integers(0, 1000) == b.rng.integers(0, 1000)
