"""Checkpoints: a JSON header next to a flat float64 parameter block.

<name>.bin holds the arrays back to back as little-endian float64;
<name>.json records their layout plus everything needed to resume a run
bit-identically: exponent value, step, optimizer scalars, the PCG64
bit-generator state, the config content hash, and the stage lineage.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ConfigError
from .gnopt import GNConfig, GNState, new_state

FORMAT = 1


def arch_signature(system) -> dict:
    """Network layout fingerprint used to refuse mismatched resumes."""
    fields = []
    for f in system.fields:
        s = f.spec
        fields.append({"name": f.name, "widths": list(s.widths),
                       "head": s.head, "fourier": s.fourier,
                       "sigma": s.sigma, "in_dim": s.in_dim})
    return {"system": system.name, "fields": fields}


def _state_blob(state: GNState | None) -> tuple:
    if state is None:
        return [], {}
    scalars = {"t": state.t, "gamma": state.gamma,
               "warn_count": state.warn_count,
               "rng": state.rng.bit_generator.state}
    return [("ema", state.ema), ("delta_prev", state.delta_prev)], scalars


def save_checkpoint(base: str, *, theta, lam: float, step: int,
                    system, config_hash: str = "", state: GNState | None = None,
                    lineage=(), extra: dict | None = None) -> str:
    """Write <base>.json + <base>.bin; returns the json path."""
    arrays = [("theta", np.asarray(theta, dtype=float))]
    state_arrays, opt = _state_blob(state)
    arrays += state_arrays
    layout, offset = [], 0
    chunks = []
    for name, arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f8")
        layout.append({"name": name, "offset": offset,
                       "shape": list(a.shape)})
        offset += a.size
        chunks.append(a.reshape(-1))
    header = {"format": FORMAT, "lambda": float(lam), "step": int(step),
              "arch": arch_signature(system), "config_hash": config_hash,
              "layout": layout, "optimizer": opt,
              "lineage": list(lineage), "extra": extra or {}}
    os.makedirs(os.path.dirname(base) or ".", exist_ok=True)
    with open(base + ".bin", "wb") as fh:
        fh.write(np.concatenate(chunks).tobytes() if chunks else b"")
    with open(base + ".json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    return base + ".json"


def load_checkpoint(base: str) -> dict:
    """Header dict plus an 'arrays' entry of named float64 arrays."""
    if base.endswith(".json") or base.endswith(".bin"):
        base = base.rsplit(".", 1)[0]
    with open(base + ".json") as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT:
        raise ConfigError(f"unknown checkpoint format {header.get('format')!r}")
    flat = np.frombuffer(open(base + ".bin", "rb").read(), dtype="<f8")
    arrays = {}
    for item in header["layout"]:
        size = int(np.prod(item["shape"])) if item["shape"] else 1
        chunk = flat[item["offset"]:item["offset"] + size]
        if chunk.size != size:
            raise ConfigError(f"checkpoint block truncated at {item['name']}")
        arrays[item["name"]] = chunk.reshape(item["shape"]).copy()
    header["arrays"] = arrays
    return header


def check_arch(header: dict, system) -> None:
    want = arch_signature(system)
    if header.get("arch") != want:
        raise ConfigError("checkpoint/architecture mismatch: "
                          f"stored {header.get('arch')}, current {want}")


def check_config_hash(header: dict, config_hash: str, force: bool = False) -> None:
    stored = header.get("config_hash", "")
    if stored and config_hash and stored != config_hash and not force:
        raise ConfigError(f"config hash mismatch: checkpoint {stored[:12]}, "
                          f"current {config_hash[:12]} (use force to override)")


def restore_state(header: dict, config: GNConfig | None = None) -> GNState | None:
    """Rebuild the optimizer state saved with the checkpoint, if any."""
    opt = header.get("optimizer") or {}
    if "rng" not in opt:
        return None
    arrays = header["arrays"]
    n = arrays["ema"].shape[0]
    state = new_state(n, 0, config or GNConfig())
    state.ema = arrays["ema"].copy()
    state.delta_prev = arrays["delta_prev"].copy()
    state.t = int(opt["t"])
    state.gamma = float(opt["gamma"])
    state.warn_count = int(opt["warn_count"])
    state.rng.bit_generator.state = opt["rng"]
    return state
