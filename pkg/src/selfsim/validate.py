"""Evaluation grids, max-residual metrics, and oracle comparison.

The headline "solution accuracy" metric everywhere is the maximum absolute
d0 residual over the standard grid; derivative metrics follow the same
max-over-everything semantics.
"""

from __future__ import annotations

import numpy as np

from . import loss as LO
from .ansatz import field_jets, q_to_y
from .equations import oracle_burgers_root
from .errors import ContractError


def standard_grid(lam: float, n_q: int = 4096, n_log: int = 2048,
                  y_log_min: float = 1e-8, y_log_max: float = 1e3) -> np.ndarray:
    """Nonnegative evaluation points: uniform-q core, log-y wings, origin."""
    q = (np.arange(n_q) + 0.5) / n_q
    y_q = q_to_y(q, lam)
    y_l = np.logspace(np.log10(y_log_min), np.log10(y_log_max), n_log)
    return np.unique(np.concatenate([[0.0], y_q, y_l]))


def mirrored(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    return np.unique(np.concatenate([-y, y]))


def max_abs_with_loc(values: np.ndarray, y: np.ndarray):
    """(max |v|, y at argmax, equation index); +inf when non-finite."""
    v = np.asarray(values)
    if not np.all(np.isfinite(v)):
        k, i = np.unravel_index(int(np.flatnonzero(~np.isfinite(v.ravel()))[0]),
                                v.shape)
        return np.inf, float(y[i]), int(k)
    a = np.abs(v)
    k, i = np.unravel_index(int(a.argmax()), a.shape)
    return float(a[k, i]), float(y[i]), int(k)


def max_dn_residual(system, theta, lam: float, y: np.ndarray, n: int,
                    rule=None) -> float:
    r = LO.pointwise_residuals(system, theta, lam, y, order=n, rule=rule)
    val, _, _ = max_abs_with_loc(r[..., n], y)
    return val


def evaluation_report(system, theta, lam: float, rule=None,
                      grid: np.ndarray | None = None,
                      max_order: int = 2) -> dict:
    """Residual metrics plus parity defect on the mirrored grid."""
    y = standard_grid(lam) if grid is None else np.asarray(grid)
    r = LO.pointwise_residuals(system, theta, lam, y, order=max_order,
                               rule=rule)
    out = {"lambda": float(lam), "system": system.name}
    for n in range(max_order + 1):
        val, at, eq = max_abs_with_loc(r[..., n], y)
        out[f"max_d{n}"] = val
        out[f"argmax_d{n}"] = {"y": at, "equation": eq}
    ymir = y[(y > 0)]
    rp = LO.pointwise_residuals(system, theta, lam, ymir, order=0, rule=rule)
    rm = LO.pointwise_residuals(system, theta, lam, -ymir, order=0, rule=rule)
    out["parity_defect"] = float(np.abs(rp[..., 0] + rm[..., 0]).max())
    return out


def oracle_profile_values(branch: int, y: np.ndarray) -> np.ndarray:
    return oracle_burgers_root(branch, y)


def profile_error_vs_oracle(evaluate, branch: int,
                            y: np.ndarray | None = None) -> tuple:
    """Sup error against the closed-form branch after gauge alignment.

    ``evaluate(y) -> values`` is the candidate profile.  The scaling
    symmetry V(y) = a*U(y/a) is scanned over a to find the representative
    closest to the candidate; returns (sup_error, a).
    """
    if y is None:
        y = standard_grid(1.0 / (2.0 * branch))
    y = np.asarray(y, dtype=float)
    cand = np.asarray(evaluate(y))
    if cand.shape != y.shape:
        raise ContractError("profile evaluator must return one value per point")

    def err(a: float) -> float:
        return float(np.abs(cand - a * oracle_burgers_root(branch, y / a)).max())

    grid = np.exp(np.linspace(np.log(0.7), np.log(1.4), 41))
    vals = [err(a) for a in grid]
    i = int(np.argmin(vals))
    lo = grid[max(0, i - 1)]
    hi = grid[min(len(grid) - 1, i + 1)]
    # golden-section refinement on [lo, hi]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = np.log(lo), np.log(hi)
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = err(np.exp(c)), err(np.exp(d))
    for _ in range(60):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = err(np.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = err(np.exp(d))
    a_best = float(np.exp(0.5 * (a + b)))
    return err(a_best), a_best


def ansatz_profile_evaluator(system, theta, lam: float, field_index: int = 0):
    """Plain-value evaluator for one field of a trained solution."""
    thetas, _ = LO.split_params(np.asarray(theta), system)

    def evaluate(y):
        j = field_jets(thetas[field_index], system.fields[field_index],
                       np.asarray(y, dtype=float), lam, 0)
        return np.asarray(j)[..., 0]

    return evaluate
