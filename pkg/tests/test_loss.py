"""Training objective assembly: view/loss identity, constraints, bounds."""

import numpy as np
import pytest

from selfsim import equations as E
from selfsim import loss as LO
from selfsim import sampling as S
from selfsim import train as TR
from selfsim.errors import ContractError
from selfsim.net import NetworkSpec


def small_system(branch=1):
    return E.BurgersSystem(branch=branch,
                           net=NetworkSpec(widths=(6, 6), head="signed_exp"))


def small_batches(lam, seed=0, scale=0.02):
    spec = S.default_sampler(scale=scale, period=50)
    return S.build_batches(spec, lam, S.resample_stream(seed, 101, 0), 0)


def test_loss_config_validation():
    with pytest.raises(ContractError):
        LO.LossConfig(c_d0=-1.0)
    with pytest.raises(ContractError):
        LO.LossConfig(c_d0=0.0, c_d1=0.0, c_d2=0.0)
    cfg = LO.LossConfig()
    assert cfg.coeff("d0") == 1.0
    assert cfg.coeff("d1") == 0.1
    assert cfg.coeff("d2") == 0.01


def test_loss_equals_sum_of_squared_view_entries():
    system = small_system()
    lam = 0.5
    theta = TR.init_theta(system, 3)
    prog = LO.ResidualProgram(system, small_batches(lam), LO.LossConfig())
    v = np.asarray(prog.view(theta, lam))
    assert abs(prog.loss_value(theta, lam) - np.sum(v**2)) < 1e-12 * (
        1 + np.sum(v**2))


def test_loss_parts_labels_cover_everything():
    system = small_system(branch=2)
    lam = 0.25
    theta = TR.init_theta(system, 4)
    prog = LO.ResidualProgram(system, small_batches(lam), LO.LossConfig())
    parts = prog.loss_parts(theta, lam)
    for key in ("d0/eq0", "d1/eq0", "d2/eq0", "constraint/u^(1)(0)",
                "constraint/u^(3)(0)", "constraint/u^(5)(0)"):
        assert key in parts
    assert abs(sum(parts.values()) - prog.loss_value(theta, lam)) < 1e-10


def test_equation_view_vanishes_on_oracle_jets():
    # oracle profile jets drive the weighted view to zero, level by level
    system = small_system()
    lam = 0.5
    batches = small_batches(lam)
    for name, order in (("d0", 0), ("d1", 1), ("d2", 2)):
        b = batches[name]
        jets = [E.oracle_burgers_profile(1, b.y, order=order + 1)]
        col = LO.equation_view_from_jets(system, b, jets, lam, 1.0, order)
        assert np.abs(col).max() < 1e-8


def test_view_weights_follow_coefficients():
    system = small_system()
    lam = 0.5
    b = small_batches(lam)["d0"]
    jets = [E.oracle_burgers_profile(1, b.y, order=1)]
    c1 = LO.equation_view_from_jets(system, b, jets, 0.4, 1.0, 0)
    c4 = LO.equation_view_from_jets(system, b, jets, 0.4, 4.0, 0)
    np.testing.assert_allclose(c4, 2.0 * c1, rtol=1e-12)


def test_pointwise_residuals_match_oracle_quality():
    system = small_system()
    y = TR.monitor_grid(0.5)[:200]
    theta = TR.init_theta(system, 5)
    r = LO.pointwise_residuals(system, theta, 0.5, y, order=2)
    assert r.shape == (1, 200, 3)
    assert np.all(np.isfinite(r))


def test_residual_sq_sums_positive():
    system = small_system()
    theta = TR.init_theta(system, 6)
    s = LO.residual_sq_sums(system, theta, 0.5, np.linspace(0.1, 3, 17))
    assert s.shape == (17,)
    assert np.all(s >= 0)


def test_constraint_defect_reads_origin_jets():
    system = small_system(branch=2)
    theta = TR.init_theta(system, 7)
    lam = 0.25
    d = LO.constraint_defect(system, theta, lam)
    thetas, _ = LO.split_params(theta, system)
    jets = np.asarray(LO._jets(thetas[0], system.fields[0], np.zeros(1),
                               lam, 5))
    expect = max(abs(jets[0, 1] + 1.0), abs(jets[0, 3]),
                 abs(jets[0, 5] - 120.0))
    assert abs(d - expect) < 1e-12


def test_constraint_defect_zero_when_unconstrained():
    class Free:
        def constraints(self):
            return []

    assert LO.constraint_defect(Free(), np.zeros(3), 0.5) == 0.0


def test_relu_bound_one_sided():
    system = small_system()
    lam = 0.5
    theta = TR.init_theta(system, 8)
    batches = small_batches(lam)
    base = LO.ResidualProgram(system, batches, LO.LossConfig())
    # bound far above the current value stays inactive
    hi = LO.ResidualProgram(
        system, batches,
        LO.LossConfig(relu_bounds=((0, 1, 1e6, 100.0),)))
    assert abs(hi.loss_value(theta, lam) - base.loss_value(theta, lam)) < 1e-12
    # bound far below forces a positive penalty
    lo = LO.ResidualProgram(
        system, batches,
        LO.LossConfig(relu_bounds=((0, 1, -1e6, 100.0),)))
    assert lo.loss_value(theta, lam) > base.loss_value(theta, lam) + 1.0


def test_far_field_penalty():
    system = small_system()
    lam = 0.5
    theta = TR.init_theta(system, 9)
    batches = small_batches(lam)
    cfg = LO.LossConfig(far_points=(1e3, 1e4), far_weight=1.0)
    prog = LO.ResidualProgram(system, batches, cfg)
    parts = prog.loss_parts(theta, lam)
    assert "far/u" in parts
    assert parts["far/u"] >= 0.0


def test_split_params_slices():
    system = E.CCFSystem(net_w=NetworkSpec(widths=(4,), head="signed_exp"),
                         net_u=NetworkSpec(widths=(6,), head="signed_exp"))
    n = LO.param_size(system)
    theta = np.arange(float(n))
    parts, used = LO.split_params(theta, system)
    assert used == n
    assert parts[0].size == system.fields[0].spec.param_count()
    assert parts[1].size == system.fields[1].spec.param_count()
    np.testing.assert_array_equal(np.concatenate(parts), theta)


def test_trainable_lambda_slot():
    system = small_system()
    theta = TR.init_theta(system, 10)
    ext = np.concatenate([theta, [0.47]])
    prog = LO.ResidualProgram(system, small_batches(0.47), LO.LossConfig(),
                              train_lambda=True)
    # the ignored lam argument is replaced by the trailing slot
    a = prog.loss_value(ext, 0.0)
    b = prog.loss_value(ext, 123.0)
    assert abs(a - b) < 1e-12
    fixed = LO.ResidualProgram(system, small_batches(0.47), LO.LossConfig())
    c = fixed.loss_value(theta, 0.47)
    assert abs(a - c) < 1e-10 * (1 + abs(c))
