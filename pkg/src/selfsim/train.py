"""Training drivers shared by the CLI and the test harness.

One loop covers single-stage profile training under every exponent
strategy; thin wrappers turn it into the funnel secant driver, the
optimizer ablation, and the picklable study cell used by worker pools.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as CK
from . import gnopt as G
from . import lambdactl as LC
from . import loss as LO
from . import sampling as S
from .errors import ConfigError
from .net import init_params
from .validate import standard_grid

METRIC_COLUMNS = ("step", "loss", "loss_d0", "loss_d1", "loss_d2",
                  "monitor_max_d0", "lambda", "gamma", "alpha", "mu")


def monitor_grid(lam: float) -> np.ndarray:
    """Thin evaluation grid for in-training residual tracking."""
    return standard_grid(lam, n_q=1024, n_log=256)


def init_theta(system, seed: int, trainable_lam: float | None = None):
    rng = np.random.default_rng(seed)
    parts = [init_params(f.spec, rng) for f in system.fields]
    if trainable_lam is not None:
        parts.append(np.array([float(trainable_lam)]))
    return np.concatenate(parts)


class MetricsWriter:
    """Streaming CSV of training metrics, one row per monitor event."""

    def __init__(self, path: str, config_hash: str = ""):
        self.path = path
        self._fh = open(path, "w", newline="")
        if config_hash:
            self._fh.write(f"# config_hash={config_hash}\n")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRIC_COLUMNS)

    def row(self, values: dict) -> None:
        self._w.writerow([repr(values[c]) if isinstance(values[c], float)
                          else values[c] for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass
class TrainResult:
    theta: np.ndarray
    lam: float
    state: G.GNState
    steps: int
    best_theta: np.ndarray
    best_max_d0: float
    best_step: int
    metrics: list = field(default_factory=list)


def train_profile(system, lam: float, *, steps: int, seed: int = 42,
                  theta0=None, state=None, start_step: int = 0,
                  sampler: S.SamplerSpec | None = None,
                  loss_cfg: LO.LossConfig | None = None,
                  gn_cfg: G.GNConfig | None = None,
                  strategy: str = "fixed", schedule: int = 100,
                  interval=(0.01, 2.0), optimizer: str = "gn",
                  lr: float = 1e-3, monitor_every: int = 500,
                  metrics: MetricsWriter | None = None,
                  checkpoint_base: str | None = None,
                  checkpoint_every: int = 0, config_hash: str = "",
                  lineage=()) -> TrainResult:
    """Resumable single-stage training at (or toward) one exponent.

    Strategies: ``fixed`` trains the fields only; ``trainable`` appends
    the exponent to the optimizer vector; ``inference`` applies the
    analytic origin update every ``schedule`` steps.  Checkpoints are
    only written on resample boundaries so a resumed run rebuilds the
    same batches and continues bit-identically.
    """
    if strategy not in ("fixed", "trainable", "inference"):
        raise ConfigError(f"train_profile cannot drive strategy {strategy!r}")
    trainable = strategy == "trainable"
    sampler = sampler or S.default_sampler(scale=0.3, period=1500)
    loss_cfg = loss_cfg or LO.LossConfig()
    period = sampler.period
    if checkpoint_every and checkpoint_every % period:
        raise ConfigError("checkpoint_every must be a multiple of the "
                          f"resample period {period}")
    if start_step % period:
        raise ConfigError("resume step must sit on a resample boundary")

    lam = float(lam)
    if theta0 is None:
        theta = init_theta(system, seed, lam if trainable else None)
    else:
        theta = np.asarray(theta0, dtype=float).copy()
    if state is None:
        state = G.new_state(theta.size, seed + 1,
                            gn_cfg or G.GNConfig())
    adam = G.new_adam(theta.size, lr=lr) if optimizer == "adam" else None
    controller = (LC.LambdaController("inference", schedule, interval)
                  if strategy == "inference" else None)

    ymon = monitor_grid(lam)
    # (score, max_d0, theta, step); score adds the origin-pin defect so a
    # collapsed zero field can never rank as the best state.
    best = (np.inf, np.inf, theta.copy(), start_step)
    rows = []
    prog = None
    met = {"loss": np.nan, "gamma": np.nan, "alpha": np.nan, "mu": np.nan}

    def current_lam():
        return float(theta[-1]) if trainable else lam

    def monitor(step):
        cl = current_lam()
        th = theta[:-1] if trainable else theta
        r = LO.pointwise_residuals(system, th, cl, ymon, 0)
        m = float(np.abs(r[..., 0]).max())
        parts = prog.loss_parts(theta, cl) if prog is not None else {}

        def level(prefix):  # parts are keyed per equation: "d0/eq0", ...
            vals = [v for k, v in parts.items() if k.startswith(prefix + "/")]
            return float(sum(vals)) if vals else np.nan

        row = {"step": step, "loss": met.get("loss", np.nan),
               "loss_d0": level("d0"),
               "loss_d1": level("d1"),
               "loss_d2": level("d2"),
               "monitor_max_d0": m, "lambda": cl,
               "gamma": met.get("gamma", np.nan),
               "alpha": met.get("alpha", np.nan),
               "mu": met.get("mu", np.nan)}
        rows.append(row)
        if metrics is not None:
            metrics.row(row)
        return m

    step = start_step
    while step < start_step + steps:
        if step % period == 0:
            idx = step // period
            srng = S.resample_stream(seed, 101, idx)
            fb = None
            if idx > 0:
                th_now, lam_now = (theta[:-1], float(theta[-1])) \
                    if trainable else (theta, lam)
                fb = (lambda ys, _t=th_now, _l=lam_now:
                      LO.residual_sq_sums(system, _t, _l, ys))
            batches = S.build_batches(sampler, current_lam(), srng, idx,
                                      residual_sq_on_grid=fb)
            prog = LO.ResidualProgram(system, batches, loss_cfg,
                                      train_lambda=trainable)
            if checkpoint_base and checkpoint_every \
                    and step % checkpoint_every == 0 and step > start_step:
                CK.save_checkpoint(checkpoint_base, theta=theta,
                                   lam=current_lam(), step=step,
                                   system=system, config_hash=config_hash,
                                   state=state, lineage=lineage)

        if trainable:
            view_fn = lambda th, _p=prog: _p.view(th, 0.0)
        else:
            view_fn = lambda th, _p=prog: _p.view(th, lam)
        if adam is not None:
            theta, met = G.baseline_step(adam, theta, view_fn)
        else:
            theta, met = G.gn_step(state, theta, view_fn)
        step += 1

        if controller is not None:
            new = controller.update(step, system, theta, lam)
            if new != lam:
                lam = new
                ymon = monitor_grid(lam)

        if step % monitor_every == 0 or step == start_step + steps:
            m = monitor(step)
            th = theta[:-1] if trainable else theta
            score = m + LO.constraint_defect(system, th, current_lam())
            if score < best[0]:
                best = (score, m, theta.copy(), step)

    if checkpoint_base:
        CK.save_checkpoint(checkpoint_base + "-final", theta=theta,
                           lam=current_lam(), step=step, system=system,
                           config_hash=config_hash, state=state,
                           lineage=lineage)
    return TrainResult(theta=theta, lam=current_lam(), state=state,
                       steps=step, best_theta=best[2], best_max_d0=best[1],
                       best_step=best[3], metrics=rows)


# --------------------------------------------------------------- funnel

def funnel_train(system, lam0: float, *, init_steps: int = 6000,
                 relax_steps: int = 2500, delta: float = 1e-3,
                 tol: float = 2e-4, max_rounds: int = 16,
                 interval=(0.01, 2.0), seed: int = 42,
                 sampler=None, loss_cfg=None, gn_cfg=None,
                 origin_region=(0.0, 0.3),
                 metrics: MetricsWriter | None = None) -> tuple:
    """Secant loop on the signed origin residual; returns (result, last).

    Each round retrains at the candidate exponent, warm-starting from
    the previous round's parameters, then reads the funnel signal.
    """
    period = sampler.period if sampler is not None else 1500
    if init_steps % period or relax_steps % period:
        raise ConfigError("funnel step budgets must be multiples of the "
                          f"resample period {period}")
    last = {}

    def evaluate(lam, carry):
        warm = carry is not None
        res = train_profile(
            system, lam, steps=relax_steps if warm else init_steps,
            seed=seed, theta0=carry[0] if warm else None,
            state=carry[1] if warm else None,
            start_step=carry[2] if warm else 0,
            sampler=sampler, loss_cfg=loss_cfg, gn_cfg=gn_cfg,
            monitor_every=relax_steps if warm else init_steps,
            metrics=metrics)
        last["res"] = res
        sig = LC.funnel_signal(system, res.theta, lam, region=origin_region)
        return sig, (res.theta, res.state, res.steps)

    out = LC.run_funnel(lam0, evaluate, delta=delta, tol=tol,
                        max_rounds=max_rounds, interval=interval,
                        relax_steps=relax_steps,
                        origin_region=origin_region)
    return out, last.get("res")


# ------------------------------------------------------------- ablation

def ablation_run(system, lam: float, *, steps: int, seed: int = 42,
                 target: float = 1e-6, sampler=None, loss_cfg=None,
                 gn_cfg=None, lr: float = 1e-3,
                 monitor_every: int = 500) -> dict:
    """GN vs first-order baseline on identical batch streams.

    Returns per-optimizer monitor histories plus the first step at which
    GN's monitored max-d0 crossed ``target`` (None if it never did).
    """
    histories = {}
    for kind in ("gn", "adam"):
        res = train_profile(system, lam, steps=steps, seed=seed,
                            sampler=sampler, loss_cfg=loss_cfg,
                            gn_cfg=gn_cfg, optimizer=kind, lr=lr,
                            monitor_every=monitor_every)
        histories[kind] = [(r["step"], r["monitor_max_d0"])
                           for r in res.metrics]
    crossed = next((s for s, m in histories["gn"] if m <= target), None)
    return {"gn": histories["gn"], "adam": histories["adam"],
            "gn_crossed_at": crossed}


# ----------------------------------------------------------- study cell

def profile_study_cell(lam: float, seed: int, recipe: dict) -> tuple:
    """One (exponent, seed) study cell; top-level so pools can pickle it.

    ``recipe`` keys: system, branch, widths, head, steps, scale, period.
    Trains at the fixed exponent and returns (standard-grid max-d0 of the
    best parameters, steps); a crash maps to NaN, which the aggregator
    records as censored.
    """
    from .config import validate_config, build_system

    cfg = validate_config({
        "run": {"system": recipe.get("system", "burgers"),
                "branch": recipe.get("branch", 1), "seed": seed},
        "network": {"widths": list(recipe.get("widths", [16, 16])),
                    "head": recipe.get("head", "signed_exp")},
        "sampler": {"scale": recipe.get("scale", 0.3),
                    "period": recipe.get("period", 1500)},
        "budget": {"steps": recipe.get("steps", 4000)},
    })
    system = build_system(cfg)
    steps = cfg["budget"]["steps"]
    try:
        res = train_profile(system, lam, steps=steps, seed=seed,
                            sampler=S.default_sampler(
                                scale=cfg["sampler"]["scale"],
                                period=cfg["sampler"]["period"]),
                            monitor_every=steps)
    except Exception:
        return float("nan"), steps
    grid = standard_grid(lam)
    r = LO.pointwise_residuals(system, res.best_theta, lam, grid, 0)
    m = float(np.abs(r[..., 0]).max())
    return m, steps
