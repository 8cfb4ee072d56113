"""Run configuration: TOML in, canonical TOML out, content-hashed.

A run is fully described by one nested mapping with fixed sections.
Loading validates strictly (unknown or mis-typed keys are all reported
at once), `--set`-style dotted overrides are applied before validation,
and the canonical serialization is hashed so artifacts can refuse to
mix configs.
"""

from __future__ import annotations

import hashlib

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .errors import ConfigError
from .gnopt import GNConfig
from .loss import LossConfig
from .net import NetworkSpec
from .sampling import default_sampler

# (type, default) per dotted key; None default means "required".
SCHEMA = {
    "run.system": (str, "burgers"),
    "run.branch": (int, 1),
    "run.seed": (int, 42),
    "run.out": (str, "runs/out"),
    "network.widths": (list, [24, 24]),
    "network.head": (str, "signed_exp"),
    "network.fourier": (int, 0),
    "network.sigma": (float, 1.0),
    "sampler.scale": (float, 0.3),
    "sampler.period": (int, 1500),
    "loss.c_d0": (float, 1.0),
    "loss.c_d1": (float, 0.1),
    "loss.c_d2": (float, 0.01),
    "optimizer.kind": (str, "gn"),
    "optimizer.beta_ema": (float, 0.99),
    "optimizer.gamma0": (float, 1e-3),
    "optimizer.gamma_min": (float, 1e-12),
    "optimizer.gamma_max": (float, 1e3),
    "optimizer.lr": (float, 1e-3),
    "lambda.strategy": (str, "fixed"),
    "lambda.value": (float, 0.5),
    "lambda.schedule": (int, 100),
    "lambda.interval": (list, [0.01, 2.0]),
    "lambda.delta": (float, 1e-3),
    "lambda.tolerance": (float, 2e-4),
    "lambda.max_rounds": (int, 16),
    "lambda.init_steps": (int, 6000),
    "lambda.relax_steps": (int, 2500),
    "budget.steps": (int, 9000),
    "budget.monitor_every": (int, 500),
    "budget.checkpoint_every": (int, 0),
}

_SYSTEMS = ("burgers", "ccf")
_STRATEGIES = ("fixed", "trainable", "inference", "funnel")


def default_config() -> dict:
    cfg: dict = {}
    for key, (_, dv) in SCHEMA.items():
        sec, name = key.split(".")
        cfg.setdefault(sec, {})[name] = dv if not isinstance(dv, list) else list(dv)
    return cfg


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def validate_config(cfg: dict) -> dict:
    """Full validated config with defaults filled; bad keys all listed."""
    flat = _flatten(cfg)
    problems = []
    for key, val in sorted(flat.items()):
        if key not in SCHEMA:
            problems.append(f"unknown key {key}")
            continue
        want, _ = SCHEMA[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, want) or (want is int and isinstance(val, bool)):
            problems.append(f"{key}: expected {want.__name__}, "
                            f"got {type(val).__name__}")
        flat[key] = val
    if flat.get("run.system") not in (*_SYSTEMS, None):
        problems.append(f"run.system: must be one of {_SYSTEMS}")
    if flat.get("lambda.strategy") not in (*_STRATEGIES, None):
        problems.append(f"lambda.strategy: must be one of {_STRATEGIES}")
    if isinstance(flat.get("run.branch"), int) and flat["run.branch"] < 1:
        problems.append("run.branch: must be >= 1")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
    full = default_config()
    for key, val in flat.items():
        sec, name = key.split(".")
        full[sec][name] = val
    return full


def load_config(path: str | None, overrides=()) -> dict:
    """Read a TOML file (or start from defaults) and apply overrides."""
    if path is None:
        cfg = {}
    else:
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    for item in overrides:
        cfg = apply_override(cfg, item)
    return validate_config(cfg)


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one `sect.key=value` override; value parsed as TOML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    try:
        val = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        val = raw.strip()  # bare strings allowed without quotes
    node = cfg
    parts = key.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must be section.name")
    node = cfg.setdefault(parts[0], {})
    if not isinstance(node, dict):
        raise ConfigError(f"override {key!r} clashes with a value")
    node[parts[1]] = val
    return cfg


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def canonical_dump(cfg: dict) -> str:
    """Stable TOML text: sorted sections, sorted keys."""
    lines = []
    for sec in sorted(cfg):
        lines.append(f"[{sec}]")
        for name in sorted(cfg[sec]):
            lines.append(f"{name} = {_toml_scalar(cfg[sec][name])}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_dump(cfg).encode()).hexdigest()


# --------------------------------------------- component construction

def network_spec(cfg: dict) -> NetworkSpec:
    net = cfg["network"]
    return NetworkSpec(widths=tuple(int(w) for w in net["widths"]),
                       head=net["head"], fourier=net["fourier"],
                       sigma=net["sigma"])


def build_system(cfg: dict):
    from .equations import BurgersSystem, CCFSystem
    spec = network_spec(cfg)
    if cfg["run"]["system"] == "burgers":
        return BurgersSystem(branch=cfg["run"]["branch"], net=spec)
    return CCFSystem(net_w=spec, net_u=spec)


def loss_config(cfg: dict) -> LossConfig:
    sec = cfg["loss"]
    return LossConfig(c_d0=sec["c_d0"], c_d1=sec["c_d1"], c_d2=sec["c_d2"])


def gn_config(cfg: dict) -> GNConfig:
    sec = cfg["optimizer"]
    return GNConfig(beta_ema=sec["beta_ema"], gamma0=sec["gamma0"],
                    gamma_min=sec["gamma_min"], gamma_max=sec["gamma_max"])


def sampler_spec(cfg: dict):
    return default_sampler(scale=cfg["sampler"]["scale"],
                           period=cfg["sampler"]["period"])
