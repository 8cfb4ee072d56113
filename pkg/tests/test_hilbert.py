"""Mapped-quadrature Hilbert transform against closed-form pairs."""

import numpy as np
import pytest

from selfsim import hilbert as H
from selfsim import tape as T
from selfsim.errors import ContractError, SingularQuadratureError


@pytest.fixture(scope="module")
def rule():
    return H.build_rule(2048)


def test_rule_invariants(rule):
    s = np.sort(rule.nodes)
    np.testing.assert_allclose(s, -s[::-1], atol=1e-12)
    assert np.all(rule.weights > 0)
    assert rule.pos.size == rule.n // 2
    with pytest.raises(ContractError):
        H.build_rule(3)
    with pytest.raises(ContractError):
        H.build_rule(0)


def test_odd_rational_pair(rule):
    # H[s/(1+s^2)] = -1/(1+y^2)
    y = np.array([0.0, 0.3, 1.0, 2.5, 10.0])
    f = rule.pos / (1.0 + rule.pos**2)
    fy = y / (1.0 + y**2)
    got = H.hilbert_values(rule, f, fy, y, "odd")
    np.testing.assert_allclose(got, -1.0 / (1.0 + y**2), atol=1e-10)


def test_odd_squared_denominator_pair(rule):
    # H[s/(1+s^2)^2] = (y^2-1) / (2 (1+y^2)^2)
    y = np.array([0.05, 0.7, 1.3, 4.0])
    f = rule.pos / (1.0 + rule.pos**2) ** 2
    fy = y / (1.0 + y**2) ** 2
    got = H.hilbert_values(rule, f, fy, y, "odd")
    expect = (y**2 - 1.0) / (2.0 * (1.0 + y**2) ** 2)
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_even_poisson_pair(rule):
    # H[1/(1+s^2)] = y/(1+y^2)
    y = np.array([0.0, 0.4, 1.0, 3.0])
    f = 1.0 / (1.0 + rule.pos**2)
    fy = 1.0 / (1.0 + y**2)
    got = H.hilbert_values(rule, f, fy, y, "even")
    np.testing.assert_allclose(got, y / (1.0 + y**2), atol=1e-10)


def test_small_y_resolved_by_subtraction(rule):
    # collocation far below the node spacing still gets the right value
    y = np.array([1e-7])
    f = rule.pos / (1.0 + rule.pos**2)
    fy = y / (1.0 + y**2)
    got = H.hilbert_values(rule, f, fy, y, "odd")
    np.testing.assert_allclose(got, -1.0 / (1.0 + y**2), atol=1e-9)


def test_node_collision_raises(rule):
    y = rule.pos[[10]]
    with pytest.raises(SingularQuadratureError):
        H.hilbert_values(rule, np.zeros(rule.pos.size), np.zeros(1), y, "odd")


def test_bad_parity_rejected(rule):
    with pytest.raises(ContractError):
        H.hilbert_values(rule, np.zeros(rule.pos.size), np.zeros(1),
                         np.array([0.5]), "none")


def test_operator_applies_jets_per_coefficient(rule):
    # coefficient k of H applied to jets is H of the k-th derivative
    y = np.array([0.2, 0.9, 2.0])
    s = rule.pos
    node_jets = np.stack([s / (1 + s**2),
                          (1 - s**2) / (1 + s**2) ** 2], axis=-1)
    point_jets = np.stack([y / (1 + y**2),
                           (1 - y**2) / (1 + y**2) ** 2], axis=-1)
    op = H.HilbertOperator(rule, y)
    got = np.asarray(op.apply_jets(node_jets, point_jets))
    np.testing.assert_allclose(got[:, 0], -1.0 / (1 + y**2), atol=1e-10)
    np.testing.assert_allclose(got[:, 1], 2 * y / (1 + y**2) ** 2, atol=1e-10)


def test_operator_is_traceable(rule):
    y = np.array([0.4, 1.1])
    s = rule.pos
    base = np.stack([s / (1 + s**2), (1 - s**2) / (1 + s**2) ** 2], axis=-1)
    point = np.stack([y / (1 + y**2), (1 - y**2) / (1 + y**2) ** 2], axis=-1)
    op = H.HilbertOperator(rule, y)

    def fn(th):
        nodes = T.jmul(T.reshape(th, (1, 2)), base)
        pts = T.jmul(T.reshape(th, (1, 2)), point)
        out = op.apply_jets(nodes, pts)
        flat = T.reshape(out, (y.size * 2,))
        return T.vsum(T.mul(flat, flat))

    theta = np.array([1.0, 0.0])
    g = T.param_gradient(fn, theta)
    assert np.all(np.isfinite(g))
    assert abs(g[0]) > 0
