"""Checkpoint round trips and resume guards."""

import numpy as np
import pytest

from selfsim import checkpoint as CK
from selfsim import gnopt as G
from selfsim.equations import BurgersSystem
from selfsim.errors import ConfigError
from selfsim.net import NetworkSpec


def make_system(widths=(6, 6)):
    return BurgersSystem(branch=1,
                         net=NetworkSpec(widths=widths, head="signed_exp"))


def test_roundtrip_bitwise(tmp_path):
    system = make_system()
    rng = np.random.default_rng(0)
    theta = rng.normal(size=system.fields[0].spec.param_count())
    state = G.new_state(theta.size, 3, G.GNConfig())
    state.ema = rng.normal(size=(theta.size, theta.size))
    state.delta_prev = rng.normal(size=theta.size)
    state.t = 17
    state.gamma = 2.5e-4
    state.rng.normal(size=100)  # advance so the bit-state is nontrivial
    path = CK.save_checkpoint(str(tmp_path / "ck"), theta=theta, lam=0.5,
                              step=17, system=system, config_hash="abc",
                              state=state, lineage=["stage1"])
    h = CK.load_checkpoint(path)
    np.testing.assert_array_equal(h["arrays"]["theta"], theta)
    np.testing.assert_array_equal(h["arrays"]["ema"], state.ema)
    assert h["lambda"] == 0.5 and h["step"] == 17
    assert h["lineage"] == ["stage1"]
    restored = CK.restore_state(h)
    assert restored.t == 17 and restored.gamma == 2.5e-4
    # identical draws after restore: the PCG64 stream continues bitwise
    np.testing.assert_array_equal(restored.rng.normal(size=8),
                                  state.rng.normal(size=8))


def test_checkpoint_without_state(tmp_path):
    system = make_system()
    theta = np.arange(5.0)
    p = CK.save_checkpoint(str(tmp_path / "c2"), theta=theta, lam=0.25,
                           step=0, system=system)
    h = CK.load_checkpoint(p)
    assert CK.restore_state(h) is None
    np.testing.assert_array_equal(h["arrays"]["theta"], theta)


def test_load_accepts_bin_or_bare_path(tmp_path):
    system = make_system()
    CK.save_checkpoint(str(tmp_path / "c3"), theta=np.zeros(3), lam=0.1,
                       step=1, system=system)
    for suffix in ("", ".json", ".bin"):
        h = CK.load_checkpoint(str(tmp_path / "c3") + suffix)
        assert h["step"] == 1


def test_arch_mismatch_refused(tmp_path):
    p = CK.save_checkpoint(str(tmp_path / "c4"), theta=np.zeros(3), lam=0.1,
                           step=1, system=make_system((6, 6)))
    h = CK.load_checkpoint(p)
    CK.check_arch(h, make_system((6, 6)))
    with pytest.raises(ConfigError, match="mismatch"):
        CK.check_arch(h, make_system((8, 8)))


def test_config_hash_guard_and_force(tmp_path):
    p = CK.save_checkpoint(str(tmp_path / "c5"), theta=np.zeros(2), lam=0.1,
                           step=1, system=make_system(), config_hash="aaaa")
    h = CK.load_checkpoint(p)
    CK.check_config_hash(h, "aaaa")
    CK.check_config_hash(h, "")  # unknown current hash: no guard
    with pytest.raises(ConfigError, match="force"):
        CK.check_config_hash(h, "bbbb")
    CK.check_config_hash(h, "bbbb", force=True)


def test_unknown_format_refused(tmp_path):
    import json
    p = CK.save_checkpoint(str(tmp_path / "c6"), theta=np.zeros(2), lam=0.1,
                           step=1, system=make_system())
    h = json.load(open(p))
    h["format"] = 99
    json.dump(h, open(p, "w"))
    with pytest.raises(ConfigError, match="format"):
        CK.load_checkpoint(p)


def test_truncated_block_detected(tmp_path):
    p = CK.save_checkpoint(str(tmp_path / "c7"), theta=np.zeros(8), lam=0.1,
                           step=1, system=make_system())
    binpath = p.replace(".json", ".bin")
    blob = open(binpath, "rb").read()
    open(binpath, "wb").write(blob[:-16])
    with pytest.raises(ConfigError, match="truncated"):
        CK.load_checkpoint(p)
