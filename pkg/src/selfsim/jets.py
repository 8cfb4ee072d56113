"""Truncated Taylor jets in one spatial variable.

A jet of order n at a point y stores the value and the first n derivatives
of a scalar function, as plain derivatives (not Taylor coefficients):

    coeffs[k] = d^k f / dy^k  evaluated at y,   k = 0..n.

All kernels below operate on float64 arrays whose *last* axis holds the
coefficients, so a batch of jets is an array of shape (..., n+1).  The
scalar :class:`Jet` wraps a 1-D coefficient array and supports operator
syntax; the batched kernels are what the tape-based parameter autodiff
reuses.

Propagation rules are exact for polynomial inputs and use the standard
truncated-series algebra: products are binomial convolutions, and every
elementary function is composed through a Horner scheme on the shifted
series, driven by the scalar derivative table of the function at the
jet's value coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, DomainError, RangeError, SingularPointError

MAX_ORDER = 8

# exp overflow guard; exp(700) is finite in float64, exp(710) is not
EXP_GUARD = 700.0


@lru_cache(maxsize=None)
def _binom(width: int) -> np.ndarray:
    """Pascal's triangle as a dense (width, width) float table."""
    b = np.zeros((width, width))
    for k in range(width):
        b[k, 0] = 1.0
        for j in range(1, k + 1):
            b[k, j] = b[k - 1, j - 1] + b[k - 1, j]
    return b


@lru_cache(maxsize=None)
def _factorials(width: int) -> np.ndarray:
    f = np.ones(width)
    for k in range(1, width):
        f[k] = f[k - 1] * k
    return f


def _check_order(n: int) -> None:
    if not 0 <= n <= MAX_ORDER:
        raise ContractError(f"jet order {n} outside [0, {MAX_ORDER}]")


def jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two jets: Leibniz rule, truncated at the common order."""
    K = a.shape[-1]
    if b.shape[-1] != K:
        raise ContractError(f"jet order mismatch: {K - 1} vs {b.shape[-1] - 1}")
    bn = _binom(K)
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (K,)
    out = np.zeros(shape)
    for k in range(K):
        acc = a[..., 0] * b[..., k]
        for j in range(1, k + 1):
            acc = acc + bn[k, j] * a[..., j] * b[..., k - j]
        out[..., k] = acc
    return out


def jet_mul_adjoint(zbar: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Adjoint of ``v -> jet_mul(v, other)`` applied to cotangent zbar.

    Returns an array of the broadcast batch shape; the caller reduces over
    broadcast axes if needed.
    """
    K = zbar.shape[-1]
    bn = _binom(K)
    shape = np.broadcast_shapes(zbar.shape[:-1], other.shape[:-1]) + (K,)
    out = np.zeros(shape)
    for j in range(K):
        acc = None
        for k in range(j, K):
            term = bn[k, j] * zbar[..., k] * other[..., k - j]
            acc = term if acc is None else acc + term
        out[..., j] = acc
    return out


def jet_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Quotient a/b via the triangular Leibniz recurrence."""
    K = a.shape[-1]
    if b.shape[-1] != K:
        raise ContractError(f"jet order mismatch: {K - 1} vs {b.shape[-1] - 1}")
    b0 = b[..., 0]
    if np.any(b0 == 0.0):
        raise SingularPointError("jet division by zero value coefficient")
    bn = _binom(K)
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (K,)
    out = np.zeros(shape)
    out[..., 0] = a[..., 0] / b0
    for k in range(1, K):
        acc = a[..., k]
        for j in range(k):
            acc = acc - bn[k, j] * out[..., j] * b[..., k - j]
        out[..., k] = acc / b0
    return out


def jet_recip(b: np.ndarray) -> np.ndarray:
    ones = np.zeros(b.shape[-1:])
    ones[0] = 1.0
    return jet_div(np.broadcast_to(ones, b.shape), b)


def _conv(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    """Plain truncated convolution of Taylor-normalized coefficients."""
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (K,)
    out = np.zeros(shape)
    for k in range(K):
        acc = None
        for j in range(max(0, k - b.shape[-1] + 1), min(k + 1, a.shape[-1])):
            term = a[..., j] * b[..., k - j]
            acc = term if acc is None else acc + term
        if acc is not None:
            out[..., k] = acc
    return out


def jet_compose(table: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Compose f o u from the derivative table of f at u's value.

    ``table[..., m]`` holds f^(m) evaluated at u[..., 0], for m up to at
    least the jet order of u.  Uses Horner's scheme on the shifted series,
    which is exact under truncation because the shifted series has zero
    constant term.
    """
    K = u.shape[-1]
    fact = _factorials(K)
    w = u / fact  # Taylor-normalize
    w = w.copy()
    w[..., 0] = 0.0
    tf = table[..., :K] / fact[: table.shape[-1]][:K]
    r = np.zeros(np.broadcast_shapes(table.shape[:-1], u.shape[:-1]) + (K,))
    r[..., 0] = tf[..., K - 1]
    for m in range(K - 2, -1, -1):
        r = _conv(r, w, K)
        r[..., 0] += tf[..., m]
    return r * fact


def table_tanh(u0: np.ndarray, n: int) -> np.ndarray:
    """Derivatives of tanh at u0 up to order n, via t' = 1 - t^2."""
    u0 = np.asarray(u0, dtype=float)
    tau = np.zeros(u0.shape + (n + 1,))
    tau[..., 0] = np.tanh(u0)
    for k in range(n):
        # Taylor recurrence: (k+1) tau_{k+1} = [1 - tau*tau]_k
        sq = np.zeros_like(u0)
        for j in range(k + 1):
            sq = sq + tau[..., j] * tau[..., k - j]
        rhs = (1.0 if k == 0 else 0.0) - sq
        tau[..., k + 1] = rhs / (k + 1)
    return tau * _factorials(n + 1)


def table_exp(u0: np.ndarray, n: int) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    if np.any(np.abs(u0) > EXP_GUARD):
        raise RangeError("exp of jet with |value| > 700")
    e = np.exp(u0)
    return np.repeat(e[..., None], n + 1, axis=-1)


def table_sin(u0: np.ndarray, n: int) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    s, c = np.sin(u0), np.cos(u0)
    cycle = [s, c, -s, -c]
    return np.stack([cycle[m % 4] for m in range(n + 1)], axis=-1)


def table_cos(u0: np.ndarray, n: int) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    s, c = np.sin(u0), np.cos(u0)
    cycle = [c, -s, -c, s]
    return np.stack([cycle[m % 4] for m in range(n + 1)], axis=-1)


def table_log(u0: np.ndarray, n: int) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 <= 0.0):
        raise DomainError("log of jet with non-positive value")
    out = np.zeros(u0.shape + (n + 1,))
    out[..., 0] = np.log(u0)
    if n >= 1:
        out[..., 1] = 1.0 / u0
        for m in range(2, n + 1):
            out[..., m] = out[..., m - 1] * (-(m - 1)) / u0
    return out


def table_pow(u0: np.ndarray, p: float, n: int) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 <= 0.0):
        raise DomainError("pow of jet with non-positive value and real exponent")
    out = np.zeros(u0.shape + (n + 1,))
    out[..., 0] = u0 ** p
    for m in range(1, n + 1):
        out[..., m] = out[..., m - 1] * (p - (m - 1)) / u0
    return out


def table_sqrt(u0: np.ndarray, n: int) -> np.ndarray:
    return table_pow(u0, 0.5, n)


_TABLES = {
    "tanh": table_tanh,
    "exp": table_exp,
    "sin": table_sin,
    "cos": table_cos,
    "log": table_log,
    "sqrt": table_sqrt,
}


def jet_fn(name: str, u: np.ndarray) -> np.ndarray:
    """Apply an elementary function to a batch of jets."""
    table = _TABLES[name](u[..., 0], u.shape[-1] - 1)
    return jet_compose(table, u)


def jet_fn_with_local(name: str, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply an elementary function; also return the jet of its derivative.

    The tangent of ``u -> f o u`` along du is ``jet_mul(jet(f' o u), du)``,
    so the second return value is the local linearization all parameter-space
    passes need.
    """
    table = _TABLES[name](u[..., 0], u.shape[-1])
    out = jet_compose(table[..., :-1], u)
    loc = jet_compose(table[..., 1:], u)
    return out, loc


def jet_pow(u: np.ndarray, p: float) -> np.ndarray:
    """u**p for real p.  Integer p is handled by repeated products so the
    result stays exact for polynomial inputs and any sign of the base."""
    if float(p) == int(p) and abs(int(p)) <= 64:
        return _jet_ipow(u, int(p))
    table = table_pow(u[..., 0], p, u.shape[-1] - 1)
    return jet_compose(table, u)


def jet_pow_with_local(u: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    if float(p) == int(p) and abs(int(p)) <= 64:
        out = _jet_ipow(u, int(p))
        loc = _jet_ipow(u, int(p) - 1) * p if p != 0 else np.zeros_like(u)
        return out, loc
    table = table_pow(u[..., 0], p, u.shape[-1])
    out = jet_compose(table[..., :-1], u)
    loc = jet_compose(table[..., 1:], u)
    return out, loc


def _jet_ipow(u: np.ndarray, p: int) -> np.ndarray:
    if p < 0:
        return jet_recip(_jet_ipow(u, -p))
    out = np.zeros_like(u)
    out[..., 0] = 1.0
    base = u
    n = p
    while n:
        if n & 1:
            out = jet_mul(out, base)
        n >>= 1
        if n:
            base = jet_mul(base, base)
    return out


def jet_shift(u: np.ndarray, m: int = 1) -> np.ndarray:
    """Jet of the m-th derivative function: drop the first m coefficients."""
    if m > u.shape[-1] - 1:
        raise ContractError("derivative shift exceeds jet order")
    return u[..., m:]


def jet_variable(y: np.ndarray, order: int) -> np.ndarray:
    """Jet of the identity function y at each point."""
    _check_order(order)
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape + (order + 1,))
    out[..., 0] = y
    if order >= 1:
        out[..., 1] = 1.0
    return out


def jet_constant(c: np.ndarray, order: int) -> np.ndarray:
    """Jet of a function that is constant in y."""
    _check_order(order)
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape + (order + 1,))
    out[..., 0] = c
    return out


@dataclass(frozen=True)
class Jet:
    """Scalar jet: value and derivatives of one function at one point."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ContractError("Jet coefficients must be a 1-D sequence")
        _check_order(c.shape[0] - 1)
        if not np.all(np.isfinite(c)):
            raise ContractError("Jet coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    @staticmethod
    def variable(y: float, order: int) -> "Jet":
        return Jet(jet_variable(np.asarray(y), order))

    @staticmethod
    def constant(c: float, order: int) -> "Jet":
        return Jet(jet_constant(np.asarray(c), order))

    def derivative(self, m: int = 1) -> "Jet":
        return Jet(jet_shift(self.coeffs, m))

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ContractError("jet order mismatch")
            return other.coeffs
        return jet_constant(np.asarray(float(other)), self.order)

    def __add__(self, other):
        return Jet(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs)

    def __sub__(self, other):
        return Jet(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return Jet(self._coerce(other) - self.coeffs)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Jet(self.coeffs * float(other))
        return Jet(jet_mul(self.coeffs, self._coerce(other)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return Jet(self.coeffs / float(other))
        return Jet(jet_div(self.coeffs, self._coerce(other)))

    def __rtruediv__(self, other):
        return Jet(jet_div(self._coerce(other), self.coeffs))

    def __pow__(self, p: float):
        return Jet(jet_pow(self.coeffs, p))

    def tanh(self) -> "Jet":
        return Jet(jet_fn("tanh", self.coeffs))

    def exp(self) -> "Jet":
        return Jet(jet_fn("exp", self.coeffs))

    def sqrt(self) -> "Jet":
        return Jet(jet_fn("sqrt", self.coeffs))

    def log(self) -> "Jet":
        return Jet(jet_fn("log", self.coeffs))

    def sin(self) -> "Jet":
        return Jet(jet_fn("sin", self.coeffs))

    def cos(self) -> "Jet":
        return Jet(jet_fn("cos", self.coeffs))


_BINARY = {"add", "sub", "mul", "div"}
_UNARY = {"tanh", "exp", "sqrt", "sin", "cos", "log", "neg"}


def jet_propagate(primitive: str, inputs, constants=None) -> Jet:
    """Dispatch a named primitive over one or two scalar jets.

    ``primitive`` is one of add/sub/mul/div/pow/tanh/exp/sqrt/sin/cos/log/
    neg/affine.  ``pow`` reads the exponent from ``constants['p']``;
    ``affine`` computes a*x + b with constants a and b.
    """
    constants = constants or {}
    if primitive in _BINARY:
        x, y = inputs
        if primitive == "add":
            return x + y
        if primitive == "sub":
            return x - y
        if primitive == "mul":
            return x * y
        return x / y
    (x,) = inputs if isinstance(inputs, (tuple, list)) else (inputs,)
    if primitive == "pow":
        return x ** constants["p"]
    if primitive == "affine":
        return x * constants.get("a", 1.0) + constants.get("b", 0.0)
    if primitive == "neg":
        return -x
    if primitive in _UNARY:
        return getattr(x, primitive)()
    raise ContractError(f"unknown primitive {primitive!r}")
