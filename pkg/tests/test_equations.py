"""Residual systems and the closed-form Burgers branches."""

import math

import numpy as np
import pytest

from selfsim import equations as E
from selfsim import jets as J
from selfsim.errors import ContractError
from selfsim.net import NetworkSpec


def test_branch_rates():
    assert E.burgers_lambda(1) == 0.5
    assert E.burgers_lambda(2) == 0.25
    assert abs(E.burgers_lambda(3) - 1.0 / 6.0) < 1e-16


@pytest.mark.parametrize("branch", [1, 2, 3])
def test_oracle_root_solves_implicit_relation(branch):
    y = np.concatenate([np.linspace(-30, 30, 41), [1e4, -1e4]])
    u = E.oracle_burgers_root(branch, y)
    p = 2 * branch + 1
    np.testing.assert_allclose(-u - u**p, y, rtol=1e-12, atol=1e-12)
    # strictly decreasing, odd
    assert np.all(np.diff(u[np.argsort(y)]) < 0)


def test_oracle_root_branch_cap():
    with pytest.raises(ContractError):
        E.oracle_burgers_root(5, np.zeros(1))


@pytest.mark.parametrize("branch", [1, 2, 3])
def test_oracle_profile_origin_series(branch):
    # y = -U - U^(2k+1) inverts to U = -y + ... with the scale pin value
    jets = E.oracle_burgers_profile(branch, np.zeros(1), order=2 * branch + 1)
    assert abs(jets[0, 1] + 1.0) < 1e-12
    for j in range(1, branch):
        assert abs(jets[0, 2 * j + 1]) < 1e-9
    top = jets[0, 2 * branch + 1]
    assert abs(top - math.factorial(2 * branch + 1)) < 1e-6 * math.factorial(
        2 * branch + 1)


@pytest.mark.parametrize("branch", [1, 2, 3])
def test_oracle_profile_jets_differentiate(branch):
    y0, h = 0.9, 1e-5
    j = E.oracle_burgers_profile(branch, np.array([y0 - h, y0, y0 + h]), 2)
    fd = (j[2, 0] - j[0, 0]) / (2 * h)
    assert abs(j[1, 1] - fd) < 1e-9


@pytest.mark.parametrize("branch", [1, 2, 3])
def test_burgers_residual_vanishes_on_oracle(branch):
    lam = E.burgers_lambda(branch)
    y = np.linspace(-5, 5, 21)
    u = E.oracle_burgers_profile(branch, y, order=4)
    a, b = E.burgers_residual_parts(u, y)
    r = np.asarray(E.combine_parts(a, b, lam))
    assert np.abs(r).max() < 1e-9


def test_burgers_residual_nonzero_off_branch():
    y = np.linspace(-3, 3, 13)
    u = E.oracle_burgers_profile(1, y, order=2)
    a, b = E.burgers_residual_parts(u, y)
    r = np.asarray(E.combine_parts(a, b, 0.4))  # wrong rate
    assert np.abs(r).max() > 1e-3


def test_residual_order_contract():
    with pytest.raises(ContractError):
        E.burgers_residual_parts(np.zeros((3, 1)), np.zeros(3))


def test_lambda_affinity_is_exact():
    # R(lam) is affine: R(l2) - R(l1) == (l2 - l1) * B
    y = np.linspace(0.2, 2.0, 7)
    u = E.oracle_burgers_profile(2, y, order=3)
    a, b = E.burgers_residual_parts(u, y)
    r1 = np.asarray(E.combine_parts(a, b, 0.2))
    r2 = np.asarray(E.combine_parts(a, b, 0.9))
    np.testing.assert_allclose(r2 - r1, 0.7 * np.asarray(b), rtol=1e-12)


def test_burgers_constraint_table():
    c2 = E.BurgersSystem(branch=2).constraints()
    assert [(c.field, c.order, c.target) for c in c2] == [
        (0, 1, -1.0), (0, 3, 0.0), (0, 5, 120.0)]
    # scale pin enters in relative terms
    assert abs(c2[2].weight - 10.0 / 120.0**2) < 1e-15
    c1 = E.BurgersSystem(branch=1).constraints()
    assert [(c.order, c.target) for c in c1] == [(1, -1.0), (3, 6.0)]


def test_ccf_constraint_table_and_flags():
    sys3 = E.CCFSystem(branch=3)
    assert [(c.order, c.target) for c in sys3.constraints()] == [
        (1, -1.0), (3, 0.0), (5, 0.0)]
    with pytest.raises(ContractError):
        E.CCFSystem(sign=0.5)
    with pytest.raises(ContractError):
        E.BurgersSystem(branch=0)


def test_ccf_field_envelopes():
    sysc = E.CCFSystem()
    w, u = sysc.fields
    assert w.k_of(0.6) == -1.0
    assert u.k_of(0.6) == 0.6
    assert sysc.n_equations == 2
    assert sysc.needs_hilbert


def test_ccf_residual_parts_semantics():
    # synthetic jets: w = y, u = y, hw = 1 on a 3-point batch
    y = np.array([0.5, 1.0, 2.0])
    K = 3
    w = J.jet_variable(y, K - 1)
    u = J.jet_variable(y, K - 1)
    hw = J.jet_constant(np.ones(3), K - 2)
    (a1, b1), (a2, b2) = E.ccf_residual_parts(w, u, hw, y, sign=1.0)
    a1 = np.asarray(a1)
    b1 = np.asarray(b1)
    a2 = np.asarray(a2)
    # W + yW' + (UW)' with W=U=y: y + y + 2y = 4y... value coefficient
    np.testing.assert_allclose(a1[:, 0], y + y + 2 * y, atol=1e-14)
    np.testing.assert_allclose(b1[:, 0], y, atol=1e-14)
    # U' - HW with U=y, HW=1: 0
    np.testing.assert_allclose(a2[:, 0], 0.0, atol=1e-14)
    np.testing.assert_array_equal(np.asarray(b2), 0.0)
    # flipped drift sign adds instead
    (_, _), (a2m, _) = E.ccf_residual_parts(w, u, hw, y, sign=-1.0)
    np.testing.assert_allclose(np.asarray(a2m)[:, 0], 2.0, atol=1e-14)


def test_ccf_hw_order_contract():
    y = np.array([1.0])
    w = J.jet_variable(y, 2)
    with pytest.raises(ContractError):
        E.ccf_residual_parts(w, w, J.jet_constant(np.ones(1), 2), y, 1.0)


def test_lambda_inference_recovers_branch_rate():
    # oracle jets stand in for the network fields via a tiny fake system
    class FakeBurgers:
        infer_order = 3
        infer_eq = 0

        def inference_parts(self, thetas, lam):
            u = E.oracle_burgers_profile(1, np.zeros(1), order=4)
            return E.burgers_residual_parts(u, np.zeros(1))

    got = E.lambda_inference(FakeBurgers(), [None], 0.4)
    assert abs(got - 0.5) < 1e-9


def test_lambda_inference_degenerate_returns_none():
    class Degenerate:
        infer_order = 1
        infer_eq = 0

        def inference_parts(self, thetas, lam):
            a = np.ones((1, 2))
            return a, np.zeros((1, 2))

    assert E.lambda_inference(Degenerate(), [None], 0.3) is None
