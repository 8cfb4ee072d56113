"""Second-stage corrector: frequency probe, composition, zero init."""

import numpy as np
import pytest

from selfsim import equations as E
from selfsim import loss as LO
from selfsim import multistage as M
from selfsim import train as TR
from selfsim.ansatz import FieldAnsatz
from selfsim.errors import ConfigError, ContractError
from selfsim.net import NetworkSpec, init_params


def small_system(branch=1):
    return E.BurgersSystem(branch=branch,
                           net=NetworkSpec(widths=(6, 6), head="signed_exp"))


def test_dominant_frequency_pure_tone():
    x = np.linspace(0.0, 1.0, 512, endpoint=False)
    v = np.sin(2 * np.pi * 5.0 * x)
    f = M.dominant_frequency(v, span=1.0)
    assert f == 5.0
    assert abs(2 * np.pi * f - 31.41592653589793) < 1e-12


def test_dominant_frequency_spans_rescale():
    x = np.linspace(0.0, 2.0, 1024, endpoint=False)
    v = np.cos(2 * np.pi * 3.0 * x)  # 3 cycles per unit, 6 over the span
    assert M.dominant_frequency(v, span=2.0) == 3.0


def test_dominant_frequency_flat_falls_back():
    with pytest.warns(UserWarning, match="flat"):
        f = M.dominant_frequency(np.zeros(512), span=1.0)
    assert f == 512 / 8.0


def test_dominant_frequency_needs_samples():
    with pytest.raises(ConfigError):
        M.dominant_frequency(np.zeros(255))


def test_zero_final_layer_silences_network():
    spec = NetworkSpec(widths=(8, 8), head="linear", fourier=16, sigma=10.0)
    rng = np.random.default_rng(0)
    theta = M.zero_final_layer(init_params(spec, rng), spec)
    from selfsim import net as N
    from selfsim import jets as J
    x = J.jet_variable(np.linspace(0, 1, 9), 2)[:, None, :]
    out = N.forward(theta, spec, x)
    np.testing.assert_array_equal(np.asarray(out), 0.0)


def test_composed_field_requires_matching_symmetry():
    base = FieldAnsatz("u", NetworkSpec(widths=(4,)), k_affine=(0.0, 1.0))
    other = FieldAnsatz("u", NetworkSpec(widths=(4,)), k_affine=(-1.0, 0.0))
    with pytest.raises(ContractError):
        M.ComposedField(base, np.zeros(base.spec.param_count()), other, 0.1)


def test_composed_system_matches_stage1_at_zero_init():
    system = small_system()
    lam = 0.5
    theta1 = TR.init_theta(system, 1)
    csys, theta2, info = M.build_stage2(system, theta1, lam, seed=2)
    grid = TR.monitor_grid(lam)[:100]
    r1 = LO.pointwise_residuals(system, theta1, lam, grid, order=1)
    r2 = LO.pointwise_residuals(csys, theta2, lam, grid, order=1)
    np.testing.assert_array_equal(r1, r2)  # exact, not approximate
    assert info["sigma"] == 2 * np.pi * info["f_d"]
    assert info["eps"] > 0


def test_build_stage2_respects_overrides():
    system = small_system()
    theta1 = TR.init_theta(system, 3)
    csys, theta2, info = M.build_stage2(
        system, theta1, 0.5, eps=1e-3, f_d=7.0, features=8, widths=(5,))
    assert info == {"eps": 1e-3, "f_d": 7.0, "sigma": 2 * np.pi * 7.0}
    assert csys.fields[0].stage2.spec.fourier == 8
    assert csys.fields[0].eps == 1e-3
    # one zero-initialized block per field
    assert theta2.size == csys.fields[0].stage2.spec.param_count()


def test_stage_amplitude_positive_and_finite():
    system = small_system()
    theta1 = TR.init_theta(system, 4)
    eps = M.stage_amplitude(system, theta1, 0.5)
    assert np.isfinite(eps) and eps > 0


def test_run_stage2_zero_steps_reports_baseline():
    system = small_system()
    theta1 = TR.init_theta(system, 5)
    res = M.run_stage2(system, theta1, 0.5, steps=0)
    assert not res.improved
    assert res.factor == 1.0
    assert res.max_d0_before == res.max_d0_after
    assert res.steps == 0


def test_zero_like_stage2_is_zero_output():
    system = small_system()
    theta1 = TR.init_theta(system, 6)
    csys, theta2, _ = M.build_stage2(system, theta1, 0.5, seed=7)
    z = M.zero_like_stage2(csys)
    assert z.size == theta2.size
    grid = np.linspace(0.1, 2.0, 20)
    r_zero = LO.pointwise_residuals(csys, z, 0.5, grid, order=0)
    r_stage1 = LO.pointwise_residuals(system, theta1, 0.5, grid, order=0)
    np.testing.assert_array_equal(r_zero, r_stage1)
