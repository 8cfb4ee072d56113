"""Self-similar residual systems and their closed-form ground truth.

Residuals are assembled from truncated Taylor jets, so one evaluation at a
point yields the residual together with its first n spatial derivatives.
Both model systems are affine in the scaling rate: R = A + lam*B with the
two parts kept separate, which the analytic rate-inference rule and the
funnel controller both rely on.  All builders go through the tape ops, so
the same code path serves plain numpy evaluation and traced training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import jets as J
from . import tape as T
from .ansatz import FieldAnsatz, field_jets
from .errors import ContractError
from .net import NetworkSpec

INFER_DENOM_TOL = 1e-12


def _ncoef(x) -> int:
    v = x.value if isinstance(x, T.Var) else np.asarray(x)
    return v.shape[-1]


def burgers_residual_parts(u, y: np.ndarray):
    """(A, B) jets with R = A + lam*B, one order below the input jet.

    A = y U' + U U' and B = y U' - U.  ``u`` holds jets of the profile at
    the points ``y``; the extra top coefficient feeds the derivative.
    """
    c = _ncoef(u)
    if c < 2:
        raise ContractError("residual needs a jet of order >= 1")
    du = T.jdiff(u)
    un = T.jtrunc(u, c - 2)
    yj = J.jet_variable(y, c - 2)
    adv = T.jmul(yj, du)
    a = T.add(adv, T.jmul(un, du))
    b = T.sub(adv, un)
    return a, b


def ccf_residual_parts(w, u, hw, y: np.ndarray, sign: float):
    """Two (A, B) pairs for the nonlocal transport system.

    Equation 0: A = W + yW' + (UW)', B = yW' (the lam-carrying part).
    Equation 1: A = U' - sign*HW, B = 0.  ``hw`` holds jets of HW one
    order below ``w``; ``sign`` picks the drift orientation.
    """
    c = _ncoef(w)
    if c < 2:
        raise ContractError("residual needs jets of order >= 1")
    if _ncoef(hw) != c - 1:
        raise ContractError("HW jet must be one order below the field jets")
    dw = T.jdiff(w)
    du = T.jdiff(u)
    wn = T.jtrunc(w, c - 2)
    un = T.jtrunc(u, c - 2)
    yj = J.jet_variable(y, c - 2)
    b1 = T.jmul(yj, dw)
    flux = T.add(T.jmul(du, wn), T.jmul(un, dw))
    a1 = T.add(T.add(wn, b1), flux)
    a2 = T.sub(du, hw) if sign > 0 else T.add(du, hw)
    b2 = np.zeros_like(a2.value if isinstance(a2, T.Var) else np.asarray(a2))
    return (a1, b1), (a2, b2)


def combine_parts(a, b, lam):
    """R = A + lam*B with lam a float or a traced scalar."""
    return T.add(a, T.jscale(b, lam))


@dataclass(frozen=True)
class Constraint:
    """Pin one derivative of one field at the origin."""

    field: int
    order: int
    target: float
    weight: float


@dataclass(frozen=True)
class BurgersSystem:
    """Self-similar Burgers profile problem on a chosen solution branch."""

    branch: int = 1
    net: NetworkSpec = field(default_factory=NetworkSpec)
    name: str = "burgers"
    needs_hilbert: bool = False

    def __post_init__(self):
        if self.branch < 1:
            raise ContractError("branch index starts at 1")

    @property
    def fields(self) -> tuple[FieldAnsatz, ...]:
        return (FieldAnsatz("u", self.net, k_affine=(0.0, 1.0), parity="odd"),)

    @property
    def n_equations(self) -> int:
        return 1

    @property
    def infer_order(self) -> int:
        return 2 * self.branch + 1

    @property
    def infer_eq(self) -> int:
        return 0

    def residual_parts(self, jets, y, hw=None):
        return [burgers_residual_parts(jets[0], y)]

    def constraints(self) -> list[Constraint]:
        k = self.branch
        out = [Constraint(0, 1, -1.0, 10.0)]
        for j in range(1, k):
            out.append(Constraint(0, 2 * j + 1, 0.0, 10.0))
        # Scale pin weighted by 1/target^2 so its defect enters in relative
        # terms; with an absolute weight the (2k+1)! target dwarfs the rest
        # of the objective on high branches and the cheapest descent is a
        # collapse onto the zero field.
        t = float(math.factorial(2 * k + 1))
        out.append(Constraint(0, 2 * k + 1, t, 10.0 / (t * t)))
        return out

    def inference_parts(self, thetas, lam: float):
        m = self.infer_order
        y0 = np.zeros(1)
        u = field_jets(thetas[0], self.fields[0], y0, lam, m + 1)
        return burgers_residual_parts(u, y0)


@dataclass(frozen=True)
class CCFSystem:
    """Transport model with velocity sourced by the Hilbert transform."""

    branch: int = 1
    net_w: NetworkSpec = field(default_factory=NetworkSpec)
    net_u: NetworkSpec = field(default_factory=NetworkSpec)
    sign: float = 1.0
    name: str = "ccf"
    needs_hilbert: bool = True

    def __post_init__(self):
        if self.branch < 1:
            raise ContractError("branch index starts at 1")
        if self.sign not in (1.0, -1.0):
            raise ContractError("drift sign flag must be +1 or -1")

    @property
    def fields(self) -> tuple[FieldAnsatz, ...]:
        return (
            FieldAnsatz("w", self.net_w, k_affine=(-1.0, 0.0), parity="odd"),
            FieldAnsatz("u", self.net_u, k_affine=(0.0, 1.0), parity="odd"),
        )

    @property
    def n_equations(self) -> int:
        return 2

    @property
    def infer_order(self) -> int:
        return 1

    @property
    def infer_eq(self) -> int:
        return 0

    def residual_parts(self, jets, y, hw=None):
        if hw is None:
            raise ContractError("CCF residual needs the HW jet")
        return list(ccf_residual_parts(jets[0], jets[1], hw, y, self.sign))

    def constraints(self) -> list[Constraint]:
        out = [Constraint(0, 1, -1.0, 10.0)]
        for j in range(1, self.branch):
            out.append(Constraint(0, 2 * j + 1, 0.0, 10.0))
        return out

    def inference_parts(self, thetas, lam: float):
        m = self.infer_order
        y0 = np.zeros(1)
        w = field_jets(thetas[0], self.fields[0], y0, lam, m + 1)
        u = field_jets(thetas[1], self.fields[1], y0, lam, m + 1)
        c = w.shape[-1]
        dw = w[..., 1:]
        du = u[..., 1:]
        wn = w[..., : c - 1]
        un = u[..., : c - 1]
        yj = J.jet_variable(y0, m)
        b1 = J.jet_mul(yj, dw)
        a1 = wn + b1 + J.jet_mul(du, wn) + J.jet_mul(un, dw)
        return a1, b1


def lambda_inference(system, thetas, lam: float):
    """Analytic rate update from origin jets; None when degenerate.

    Sets the m-th origin derivative of the inference equation to zero at
    fixed fields: lam* = -A^(m)(0) / B^(m)(0).
    """
    a, b = system.inference_parts(thetas, lam)
    a = np.asarray(a)
    b = np.asarray(b)
    m = system.infer_order
    am = float(a[0, m])
    bm = float(b[0, m])
    if abs(bm) <= INFER_DENOM_TOL * max(1.0, abs(am)):
        return None
    return -am / bm


def burgers_lambda(branch: int) -> float:
    """Admissible scaling rate of the k-th smooth branch."""
    return 1.0 / (2.0 * branch)


MAX_ORACLE_BRANCH = 4


def oracle_burgers_root(branch: int, y: np.ndarray) -> np.ndarray:
    """Unique real root U of y = -U - U^(2k+1), vectorized.

    The map is strictly decreasing, so bisection is safe; a few Newton
    polish steps bring the root to full precision.
    """
    if not 1 <= branch <= MAX_ORACLE_BRANCH:
        raise ContractError(f"oracle supports branches 1..{MAX_ORACLE_BRANCH}")
    y = np.asarray(y, dtype=float)
    p = 2 * branch + 1
    hi = 1.0 + np.abs(y) ** (1.0 / p)
    lo = -hi
    # g(U) = -U - U^p - y is decreasing in U: keep g(lo) >= 0 >= g(hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        g = -mid - mid**p - y
        lo = np.where(g >= 0.0, mid, lo)
        hi = np.where(g >= 0.0, hi, mid)
    u = 0.5 * (lo + hi)
    for _ in range(3):
        g = -u - u**p - y
        dg = -1.0 - p * u ** (p - 1)
        u = u - g / dg
    return u


def oracle_burgers_profile(branch: int, y: np.ndarray, order: int = 6) -> np.ndarray:
    """Jets of the exact branch-k profile at y, to the given order.

    Inverts the closed-form relation y = -U - U^(2k+1): the jet of y as a
    function of U is exact, and the inverse series is recovered one order
    at a time (each composition error at order m is linear in the missing
    coefficient, with factor dy/dU at the base point).
    """
    y = np.asarray(y, dtype=float)
    u0 = oracle_burgers_root(branch, y)
    p = 2 * branch + 1
    out = np.zeros(y.shape + (order + 1,))
    out[..., 0] = u0
    if order == 0:
        return out
    t = J.jet_variable(u0, order)
    y_of_u = -t - J.jet_pow(t, p)
    dy0 = y_of_u[..., 1]
    out[..., 1] = 1.0 / dy0
    for m in range(2, order + 1):
        comp = J.jet_compose(y_of_u, out)
        err = comp[..., m]
        out[..., m] -= err / dy0
    return out
