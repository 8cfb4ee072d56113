"""Stochastic full-matrix Gauss-Newton with Levenberg-Marquardt damping.

The optimizer works on the weighted residual view e(theta) from the loss
module.  Internally it minimizes h = 0.5*sum(e^2), so J^T J is exactly the
Gauss-Newton curvature of h and the closed-form step size is 1 on exact
quadratics; reported losses are L = sum(e^2) = 2h throughout.

Curvature is estimated by the rank-1 trick: for Rademacher v,
E[(J^T v)(J^T v)^T] = J^T J, accumulated in an exponential moving average
with bias correction.  The preconditioner uses the EMA matrix; the 2x2
solve for the optimal (step, momentum) pair uses exact curvature products
on the current batch (one forward and one reverse sweep each).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import tape as T
from .errors import NumericsError


@dataclass(frozen=True)
class GNConfig:
    beta_ema: float = 0.99
    gamma0: float = 1e-3
    gamma_min: float = 1e-12
    gamma_max: float = 1e3
    increase: float = 1.5
    decrease: float = 1.5
    rho_good: float = 0.75
    rho_bad: float = 0.25
    reject_factor: float = 10.0
    reject_gamma: float = 10.0


@dataclass
class GNState:
    n: int
    config: GNConfig
    rng: np.random.Generator
    ema: np.ndarray = None
    t: int = 0
    gamma: float = None
    delta_prev: np.ndarray = None
    warn_count: int = 0

    def __post_init__(self):
        if self.ema is None:
            self.ema = np.zeros((self.n, self.n))
        if self.gamma is None:
            self.gamma = self.config.gamma0
        if self.delta_prev is None:
            self.delta_prev = np.zeros(self.n)

    def curvature(self) -> np.ndarray:
        """Bias-corrected EMA estimate of J^T J."""
        denom = 1.0 - self.config.beta_ema**self.t
        if self.t == 0 or denom <= 0.0:
            return self.ema.copy()
        return self.ema / denom


def new_state(n: int, seed: int = 0, config: GNConfig = GNConfig()) -> GNState:
    return GNState(n=n, config=config,
                   rng=np.random.Generator(np.random.PCG64(seed)))


def rank1_update(state: GNState, tape: T.Tape, theta_var: T.Var,
                 view: T.Var) -> None:
    """One Rademacher draw folded into the EMA curvature, in place."""
    m = view.value.size
    v = state.rng.integers(0, 2, size=m).astype(float) * 2.0 - 1.0
    g = tape.vjp(view, v.reshape(view.value.shape))[theta_var.id]
    if g is None or not np.all(np.isfinite(g)):
        state.warn_count += 1
        return
    b = state.config.beta_ema
    state.ema *= b
    if b != 1.0:
        state.ema += (1.0 - b) * np.outer(g, g)
    state.ema = 0.5 * (state.ema + state.ema.T)
    state.t += 1


def _chol_solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky with escalating jitter; raises NumericsError when hopeless."""
    jitter = 0.0
    scale = max(float(np.trace(mat)) / mat.shape[0], 1e-30)
    for _ in range(6):
        try:
            c, low = sla.cho_factor(mat + jitter * np.eye(mat.shape[0]),
                                    lower=True, check_finite=False)
            return sla.cho_solve((c, low), rhs, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = scale * 1e-12 if jitter == 0.0 else jitter * 100.0
    raise NumericsError("curvature factorization failed")


def solve_and_coeffs(state: GNState, grad: np.ndarray, gprod) -> tuple:
    """Damped-Newton direction plus closed-form (alpha*, mu*).

    ``gprod`` maps a vector to the exact batch J^T(J v).  Returns
    (delta, alpha, mu, predicted_reduction).
    """
    gam = state.gamma
    mat = state.curvature()
    mat = mat + gam * np.eye(state.n)
    delta = _chol_solve(mat, -grad)

    dp = state.delta_prev
    use_prev = float(dp @ dp) > 0.0
    gd = gprod(delta) + gam * delta
    a11 = float(delta @ gd)
    b1 = float(grad @ delta)
    if use_prev:
        gp = gprod(dp) + gam * dp
        a12 = float(delta @ gp)
        a22 = float(dp @ gp)
        b2 = float(grad @ dp)
        det = a11 * a22 - a12 * a12
        if abs(det) > 1e-14 * max(a11 * a22, 1.0):
            alpha = (-b1 * a22 + b2 * a12) / det
            mu = (-b2 * a11 + b1 * a12) / det
        else:
            alpha = -b1 / a11 if a11 > 0.0 else 0.0
            mu = 0.0
    else:
        alpha = -b1 / a11 if a11 > 0.0 else 0.0
        mu = 0.0

    step = alpha * delta + (mu * dp if use_prev else 0.0)
    # model value q = 0.5 s^T (G+gI) s + grad^T s; its negative is the
    # predicted reduction of h, >= 0 at the exact minimizer
    gs = gprod(step) + gam * step
    q = 0.5 * float(step @ gs) + float(grad @ step)
    if q > 0.0:
        alpha = -b1 / a11 if a11 > 0.0 else 0.0
        mu = 0.0
        step = alpha * delta
        q = 0.5 * a11 * alpha * alpha + b1 * alpha
        if q > 0.0:
            alpha = 0.0
            step = np.zeros_like(delta)
            q = 0.0
    return step, float(alpha), float(mu), -q


def adjust_damping(gamma: float, rho: float,
                   config: GNConfig = GNConfig()) -> float:
    if rho > config.rho_good:
        gamma = gamma / config.decrease
    elif rho < config.rho_bad:
        gamma = gamma * config.increase
    return float(np.clip(gamma, config.gamma_min, config.gamma_max))


def gn_step(state: GNState, theta: np.ndarray, view_fn) -> tuple:
    """One optimizer step.

    ``view_fn(theta)`` must accept a traced Var (training sweep) and a
    plain array (candidate evaluation) and return the residual view.
    Returns (theta', metrics); the state is updated in place.
    """
    tape, th, e = T.trace(view_fn, theta)
    e0 = e.value
    loss = float(np.sum(e0 * e0))
    grad = tape.vjp(e, e0)[th.id]
    if grad is None:
        grad = np.zeros_like(theta)
    gnorm = float(np.linalg.norm(grad))
    metrics = {"loss": loss, "grad_norm": gnorm, "gamma": state.gamma,
               "alpha": 0.0, "mu": 0.0, "rejected": False,
               "loss_after": loss}
    rank1_update(state, tape, th, e)
    if gnorm == 0.0:
        return theta, metrics

    def gprod(vec):
        tan = tape.jvp({th.id: vec})[e.id]
        return tape.vjp(e, tan)[th.id]

    try:
        step, alpha, mu, pred = solve_and_coeffs(state, grad, gprod)
        cand = theta + step
        e_new = view_fn(cand)
        v = e_new.value if isinstance(e_new, T.Var) else np.asarray(e_new)
        loss_new = float(np.sum(v * v))
        failed = not np.isfinite(loss_new)
    except NumericsError:
        failed = True
        loss_new = np.inf
        step, alpha, mu, pred = np.zeros_like(theta), 0.0, 0.0, 0.0

    cfg = state.config
    if failed or loss_new > cfg.reject_factor * loss:
        state.gamma = float(np.clip(state.gamma * cfg.reject_gamma,
                                    cfg.gamma_min, cfg.gamma_max))
        metrics.update(rejected=True, gamma=state.gamma)
        return theta, metrics

    h_drop = 0.5 * (loss - loss_new)
    rho = h_drop / pred if pred > 1e-300 else (1.0 if h_drop > 0 else 0.0)
    state.gamma = adjust_damping(state.gamma, rho, cfg)
    state.delta_prev = step
    metrics.update(alpha=alpha, mu=mu, gamma=state.gamma,
                   loss_after=loss_new)
    return cand, metrics


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def new_adam(n: int, lr: float = 1e-3) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), lr=lr)


def baseline_step(state: AdamState, theta: np.ndarray, view_fn) -> tuple:
    """First-order adaptive baseline on the same objective h."""
    tape, th, e = T.trace(view_fn, theta)
    e0 = e.value
    loss = float(np.sum(e0 * e0))
    grad = tape.vjp(e, e0)[th.id]
    if grad is None or not np.all(np.isfinite(grad)):
        return theta, {"loss": loss, "grad_norm": 0.0}
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mh = state.m / (1 - state.beta1**state.t)
    vh = state.v / (1 - state.beta2**state.t)
    theta = theta - state.lr * mh / (np.sqrt(vh) + state.eps)
    return theta, {"loss": loss, "grad_norm": float(np.linalg.norm(grad))}
