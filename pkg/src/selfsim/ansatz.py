"""Field ansatz: symmetry prefactor x network(q) x far-field envelope.

A field with scaling exponent k(lambda) and odd symmetry is represented as

    Phi(y) = [y / sqrt(1+y^2)] * N(q) * (1+y^2)^(p/2),

with the compactified coordinate q = (1+y^2)^(-alpha/2), alpha = 1/(1+lambda)
and envelope exponent p = k(lambda)/(1+lambda).  The network only ever sees
q, which is even in y, so odd parity is structural, not learned: evaluating
at -y flips the sign of the prefactor bit-for-bit and touches nothing else.

k(lambda) is affine, k = c0 + c1*lambda, which covers both model problems
(k = lambda, k = -1).  lambda may be a plain float (exponents fold to
constants) or a traced scalar (trainable-lambda mode differentiates through
alpha and p as well).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jets as J
from . import net as N
from . import tape as T
from .errors import ContractError


@dataclass(frozen=True)
class FieldAnsatz:
    name: str
    spec: N.NetworkSpec
    k_affine: tuple = (0.0, 1.0)  # k(lam) = c0 + c1*lam
    parity: str = "odd"

    def __post_init__(self):
        if self.parity != "odd":
            raise ContractError("only odd fields are supported")

    def k_of(self, lam: float) -> float:
        return self.k_affine[0] + self.k_affine[1] * lam

    def envelope_exponent(self, lam: float) -> float:
        return self.k_of(lam) / (1.0 + lam)


def alpha_of(lam: float) -> float:
    return 1.0 / (1.0 + lam)


def compactify(y: np.ndarray, lam, order: int):
    """Jets of q = (1+y^2)^(-alpha/2) at each point of y."""
    u = _one_plus_y2(y, order)
    if isinstance(lam, T.Var):
        logu = J.jet_fn("log", u)
        e = T.mul(T.recip(T.add(lam, 1.0)), -0.5)
        return T.jexp(T.jscale(logu, e))
    return J.jet_pow(u, -0.5 * alpha_of(lam))


def y_to_q(y: np.ndarray, lam: float) -> np.ndarray:
    return (1.0 + np.asarray(y) ** 2) ** (-0.5 * alpha_of(lam))


def q_to_y(q: np.ndarray, lam: float) -> np.ndarray:
    """Positive branch of the inverse map."""
    q = np.asarray(q, dtype=float)
    return np.sqrt(np.maximum(q ** (-2.0 / alpha_of(lam)) - 1.0, 0.0))


def _one_plus_y2(y: np.ndarray, order: int) -> np.ndarray:
    yj = J.jet_variable(np.asarray(y, dtype=float), order)
    u = J.jet_mul(yj, yj)
    u[..., 0] += 1.0
    return u


def prefactor_jets(y: np.ndarray, order: int) -> np.ndarray:
    """Jets of y/sqrt(1+y^2): odd, bounded, slope 1 at the origin."""
    yj = J.jet_variable(np.asarray(y, dtype=float), order)
    u = _one_plus_y2(y, order)
    return J.jet_mul(yj, J.jet_pow(u, -0.5))


def envelope_jets(y: np.ndarray, ansatz: FieldAnsatz, lam, order: int):
    """Jets of (1+y^2)^(p/2) with p = k(lam)/(1+lam)."""
    u = _one_plus_y2(y, order)
    c0, c1 = ansatz.k_affine
    if isinstance(lam, T.Var):
        logu = J.jet_fn("log", u)
        k = T.add(T.mul(lam, c1), c0)
        p_half = T.mul(T.mul(k, T.recip(T.add(lam, 1.0))), 0.5)
        return T.jexp(T.jscale(logu, p_half))
    p = ansatz.envelope_exponent(float(lam))
    return J.jet_pow(u, 0.5 * p)


def field_jets(theta, ansatz: FieldAnsatz, y: np.ndarray, lam, order: int,
               offset: int = 0):
    """Jets of the full field Phi(y) to the given order.

    theta: Var or flat array; lam: float or scalar Var.  Returns (..., K).
    """
    q = compactify(y, lam, order)
    g = N.forward(theta, ansatz.spec, _expand_input(q), offset)
    pre = prefactor_jets(y, order)
    env = envelope_jets(y, ansatz, lam, order)
    return T.jmul(T.jmul(pre, g), env)


def _expand_input(q):
    """(..., K) -> (..., 1, K) feature axis for the network."""
    val = q.value if isinstance(q, T.Var) else np.asarray(q)
    return T.reshape(q, val.shape[:-1] + (1, val.shape[-1]))


def net_factor_value(theta: np.ndarray, ansatz: FieldAnsatz, q: np.ndarray,
                     offset: int = 0) -> np.ndarray:
    """Network factor N(q) sampled at plain q values (no derivatives)."""
    qj = J.jet_constant(np.asarray(q, dtype=float), 0)
    out = N.forward(theta, ansatz.spec, _expand_input(qj), offset)
    return np.asarray(out)[..., 0]
