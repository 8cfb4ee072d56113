"""Hilbert transform on the line by mapped Gauss-Legendre quadrature.

    Hf(y) = (1/pi) PV int f(s)/(y-s) ds

Nodes come from s = tan(pi*tau/2) with Gauss-Legendre tau in (-1,1); the
node set is symmetric about 0 and weights are positive.  For a function of
known parity the negative half folds onto s > 0:

    odd  f:  Hf(y) = (1/pi) int_0^inf f(s) * 2s/(y^2-s^2) ds      (even in y)
    even f:  Hf(y) = (1/pi) int_0^inf f(s) * 2y/(y^2-s^2) ds      (odd in y)

The principal value at s = |y| is removed by subtracting a multiple of a
fixed reference profile matched to f at the singular point:

    even f:  subtract f(y) * 1            (PV integral of the kernel is 0)
    odd  f:  subtract a * psi0(s),  psi0(s) = s/(1+s^2),  a = f(|y|)/psi0(|y|),
             then add back a * H[psi0](|y|) with H[psi0](t) = -1/(1+t^2).

The reference profile has no structure at the scale of y, so the folded
integrand stays resolved even when |y| drops below the node spacing, and
both the numerator and psi0 are odd analytic functions, so the folded
integrand is an even smooth function of s with no derivative kink at the
origin.  The discrete operator is then a dense kernel matrix acting on
node values plus a diagonal coefficient on the value at y itself, so both
pieces are linear and tape-friendly.  Applied to jets coefficient by
coefficient: H and d/dy commute, and the k-th derivative of an odd
function has parity odd/even for k even/odd.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tape as T
from .errors import ContractError, SingularQuadratureError


@lru_cache(maxsize=8)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class HilbertRule:
    """Mapped quadrature nodes on the whole line."""

    nodes: np.ndarray    # all s_j, symmetric about 0
    weights: np.ndarray  # mapped weights, positive
    pos: np.ndarray      # s_j > 0 subset
    pos_weights: np.ndarray
    n: int


def build_rule(n: int = 2048) -> HilbertRule:
    if n < 2:
        raise ContractError("Hilbert rule needs at least 2 nodes")
    if n % 2:
        # an odd count puts a node at s = 0 whose half-weight the fold to
        # s > 0 would silently drop
        raise ContractError("Hilbert rule node count must be even")
    tau, w = _leggauss(n)
    s = np.tan(0.5 * np.pi * tau)
    ws = w * 0.5 * np.pi * (1.0 + s * s)
    keep = s > 0
    return HilbertRule(nodes=s, weights=ws, pos=s[keep], pos_weights=ws[keep], n=n)


def _kernels(rule: HilbertRule, y: np.ndarray, subtract: bool):
    """Dense kernel matrices and value-coefficients for both parities.

    Returns (M_odd, c_odd, M_even, c_even) with
        (Hf)(y_i) = M @ f(s_j) + c_i * f(y_i).
    """
    y = np.asarray(y, dtype=float)
    s = rule.pos
    w = rule.pos_weights
    y2 = (y * y)[:, None]
    s2 = (s * s)[None, :]
    denom = y2 - s2
    if np.any(denom == 0.0):
        raise SingularQuadratureError(
            "collocation point coincides with a quadrature node"
        )
    base = w[None, :] / (np.pi * denom)
    m_odd = 2.0 * s[None, :] * base
    m_even = 2.0 * y[:, None] * base
    if not subtract:
        z = np.zeros(y.shape)
        return m_odd, z, m_even, z
    # odd parity: subtract a * psi0 with a = f(|y|)/psi0(|y|) and add back
    # a * H[psi0](|y|); the sign carries f(|y|) = sign(y) f(y) for odd f
    psi0 = s / (1.0 + s2[0])
    h_psi0 = -1.0 / (1.0 + y * y)
    psi0_at = np.abs(y) / (1.0 + y * y)
    with np.errstate(invalid="ignore", divide="ignore"):
        c_odd = np.sign(y) * (h_psi0 - m_odd @ psi0) / psi0_at
    c_odd = np.where(y == 0.0, 0.0, c_odd)
    c_even = -np.sum(m_even, axis=1)
    return m_odd, c_odd, m_even, c_even


def hilbert_values(rule: HilbertRule, f_nodes: np.ndarray, f_at_y: np.ndarray,
                   y: np.ndarray, parity: str, subtract: bool = True) -> np.ndarray:
    """Hf at points y from samples of f at the rule's positive nodes.

    ``f_nodes`` are f(s_j) on rule.pos; ``f_at_y`` are f(y_i); ``parity`` is
    the parity of f itself ('odd' or 'even').
    """
    m_odd, c_odd, m_even, c_even = _kernels(rule, y, subtract)
    if parity == "odd":
        return m_odd @ f_nodes + c_odd * f_at_y
    if parity == "even":
        return m_even @ f_nodes + c_even * f_at_y
    raise ContractError(f"parity must be 'odd' or 'even', got {parity!r}")


class HilbertOperator:
    """Precomputed kernel matrices for a fixed evaluation batch.

    Applies H to jets of an odd function: coefficient k of the result is
    H of the k-th derivative, whose parity alternates starting at odd.
    Linear in both the node jets and the point jets, so the traced
    application is two matmuls and a diagonal product per coefficient.
    """

    def __init__(self, rule: HilbertRule, y: np.ndarray, subtract: bool = True):
        self.rule = rule
        self.y = np.asarray(y, dtype=float)
        m_odd, c_odd, m_even, c_even = _kernels(rule, self.y, subtract)
        self.m = {"odd": m_odd, "even": m_even}
        self.c = {"odd": c_odd, "even": c_even}

    def apply_jets(self, node_jets, point_jets):
        """node_jets: (N_pos, K) jets of f at rule.pos; point_jets: (P, K).

        Returns jets (P, K) of Hf at the batch points, f odd.
        """
        nv = node_jets.value if isinstance(node_jets, T.Var) else np.asarray(node_jets)
        K = nv.shape[-1]
        P = self.y.shape[0]
        cols = []
        for k in range(K):
            par = "odd" if k % 2 == 0 else "even"
            col = T.matmul(self.m[par], T.reshape(T.jget(node_jets, k), (-1, 1)))
            corr = T.mul(self.c[par], T.jget(point_jets, k))
            col = T.add(col, T.reshape(corr, (P, 1)))
            cols.append(col)
        return T.concat(cols, axis=-1)
