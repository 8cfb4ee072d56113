"""Scaling-exponent control: secant funnel, inference schedule, predictor.

Three ways to pin the scaling exponent during training: treat it as one
extra optimization coordinate (handled by the loss/optimizer), apply the
analytic origin-inference update on a schedule, or drive it from outside
by the funnel: relax at fixed lam, read the signed near-origin residual,
and secant-step toward its zero.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import loss as LO
from .equations import lambda_inference
from .errors import ConfigError

PREDICTOR_FITS = {
    # slope, intercept, additive shift of the 1/(a n + b) + c fit
    "boussinesq": (1.4187, 1.0863, 1.0),
    "ipm": (1.1459, 0.9723, 0.0),
}


def predict_lambda(system: str, n: int) -> float:
    """Empirical initializer for the n-th unstable exponent."""
    if system not in PREDICTOR_FITS:
        raise ConfigError(
            f"no exponent fit for {system!r}; available: "
            f"{sorted(PREDICTOR_FITS)}")
    if int(n) != n or n < 1:
        raise ConfigError("branch index must be an integer >= 1")
    a, b, c = PREDICTOR_FITS[system]
    return 1.0 / (a * n + b) + c


def signed_max(values: np.ndarray) -> float:
    """Entry of maximum absolute value, sign preserved."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ConfigError("signed_max of empty grid")
    return float(v[np.argmax(np.abs(v))])


def origin_grid(region=(0.0, 0.3), n: int = 512) -> np.ndarray:
    """Half linear, half log-spaced points covering the origin region."""
    lo, hi = region
    lin = np.linspace(lo, hi, n // 2)
    log_lo = lo if lo > 0.0 else hi * 1e-5
    lg = np.logspace(np.log10(log_lo), np.log10(hi), n - n // 2)
    return np.unique(np.concatenate([lin, lg]))


def funnel_signal(system, theta, lam: float, region=(0.0, 0.3),
                  n: int = 512, rule=None) -> float:
    """Signed residual of maximum magnitude near the origin."""
    y = origin_grid(region, n)
    r = LO.pointwise_residuals(system, theta, lam, y, order=0, rule=rule)
    return signed_max(r[..., 0])


@dataclass
class FunnelHistory:
    entries: list = field(default_factory=list)  # (lam, r_hat) pairs
    delta: float = 1e-3
    relax_steps: int = 20000
    origin_region: tuple = (0.0, 0.3)
    max_step: float = 0.1

    def add(self, lam: float, r_hat: float) -> None:
        self.entries.append((float(lam), float(r_hat)))


def funnel_next(history: FunnelHistory) -> float:
    """Next exponent to relax at: perturb once, then secant on the signal.

    Equal signals in the last two entries make the secant degenerate; the
    caller should re-relax at the repeated value before asking again.
    """
    if not history.entries:
        raise ConfigError("funnel_next needs at least one entry")
    if len(history.entries) == 1:
        return history.entries[0][0] + history.delta
    (l0, r0), (l1, r1) = history.entries[-2], history.entries[-1]
    if r0 == r1:
        return l1
    nxt = l1 - r1 * (l1 - l0) / (r1 - r0)
    lo, hi = l1 - history.max_step, l1 + history.max_step
    return float(min(max(nxt, lo), hi))


@dataclass
class FunnelResult:
    lam: float
    history: FunnelHistory
    converged: bool
    rounds: int


def run_funnel(lam0: float, evaluate, delta: float = 1e-3,
               tol: float = 2e-4, max_rounds: int = 16,
               interval=(0.01, 2.0), relax_steps: int = 20000,
               origin_region=(0.0, 0.3)) -> FunnelResult:
    """Drive ``evaluate(lam, state) -> (r_hat, state)`` to the signal zero.

    ``state`` threads warm-start data (trained parameters) between rounds,
    so each relaxation continues from the previous one.
    """
    hist = FunnelHistory(delta=delta, relax_steps=relax_steps,
                         origin_region=origin_region)
    state = None
    lam = float(lam0)
    repeats = 0
    for rounds in range(1, max_rounds + 1):
        r_hat, state = evaluate(lam, state)
        hist.add(lam, r_hat)
        if (len(hist.entries) >= 2
                and hist.entries[-1][1] == hist.entries[-2][1]):
            repeats += 1  # degenerate secant: relax again at the same lam
            if repeats >= 2:
                return FunnelResult(lam, hist, False, rounds)
            continue
        repeats = 0
        nxt = funnel_next(hist)
        nxt = float(min(max(nxt, interval[0]), interval[1]))
        if len(hist.entries) >= 2 and abs(nxt - lam) <= tol:
            return FunnelResult(nxt, hist, True, rounds)
        lam = nxt
    return FunnelResult(lam, hist, False, max_rounds)


class LambdaController:
    """Scheduled in-training exponent updates (trainable or inference)."""

    KINDS = ("trainable", "inference", "funnel")

    def __init__(self, kind: str, schedule: int = 100,
                 interval=(0.01, 2.0)):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown lambda strategy {kind!r}")
        if kind == "funnel":
            raise ConfigError(
                "the funnel strategy drives training externally; "
                "use run_funnel")
        self.kind = kind
        self.schedule = int(schedule)
        self.interval = interval

    def update(self, step: int, system, theta, lam: float) -> float:
        if self.kind == "trainable":
            return lam  # the optimizer owns the extra coordinate
        if step == 0 or step % self.schedule:
            return lam
        thetas, _ = LO.split_params(np.asarray(theta), system)
        new = lambda_inference(system, [np.asarray(t) for t in thetas], lam)
        if new is None:
            return lam
        lo, hi = self.interval
        if not lo <= new <= hi:
            clamped = min(max(new, lo), hi)
            warnings.warn(
                f"inferred exponent {new:.6g} outside ({lo}, {hi}); "
                f"clamped to {clamped:.6g}")
            return clamped
        return new


# ---------------------------------------------------------------- study

def symlog_offsets(decades=(-4, -3, -2, -1)) -> list:
    out = [0.0]
    for d in decades:
        out.extend([-(10.0 ** d), 10.0 ** d])
    return sorted(out)


@dataclass
class StudyCell:
    lam: float
    seed: int
    max_d0: float
    steps: int
    status: str  # ok | censored


def geometric_mean(values) -> float:
    v = np.asarray(list(values), dtype=float)
    return float(np.exp(np.mean(np.log(v))))


def _aggregate(lam_star: float, offsets, cells) -> dict:
    rows = []
    for off in offsets:
        lam = lam_star + off
        ok = [c.max_d0 for c in cells
              if c.lam == lam and c.status == "ok"]
        cen = sum(1 for c in cells if c.lam == lam and c.status != "ok")
        row = {"lambda": lam, "offset": off, "n_ok": len(ok),
               "n_censored": cen}
        if ok:
            logs = np.log10(ok)
            row["r_tilde"] = float(10.0 ** logs.mean())
            row["e_tilde"] = float(logs.std())
        else:
            row["r_tilde"] = math.inf
            row["e_tilde"] = math.nan
        rows.append(row)
    return {"lambda_star": lam_star, "rows": rows}


def significant_digits(summary: dict) -> int:
    """Decimal position of the smallest offset that leaves the basin."""
    rows = summary["rows"]
    base = next((r for r in rows if r["offset"] == 0.0), None)
    if base is None or not np.isfinite(base["r_tilde"]):
        raise ConfigError("study needs a completed zero-offset column")
    bar = math.log10(base["r_tilde"]) + 10.0 * base["e_tilde"]
    flagged = [abs(r["offset"]) for r in rows
               if r["offset"] != 0.0 and np.isfinite(r["r_tilde"])
               and math.log10(r["r_tilde"]) >= bar]
    if not flagged:
        return 0
    return int(math.ceil(-math.log10(min(flagged)) - 1e-12))


def lambda_study(lam_star: float, offsets, seeds, run_cell,
                 workers: int = 1) -> tuple:
    """Run the (offset x seed) grid and aggregate basin statistics.

    ``run_cell(lam, seed) -> (max_d0, steps)`` must be deterministic in
    its arguments; a non-finite residual marks the cell censored.
    """
    jobs = [(lam_star + off, seed) for off in offsets for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run_cell, *zip(*jobs)))
    else:
        outs = [run_cell(lam, seed) for lam, seed in jobs]
    cells = []
    for (lam, seed), (max_d0, steps) in zip(jobs, outs):
        status = "ok" if np.isfinite(max_d0) else "censored"
        cells.append(StudyCell(lam, seed, float(max_d0), int(steps), status))
    summary = _aggregate(lam_star, offsets, cells)
    summary["significant_digits"] = significant_digits(summary)
    return cells, summary


def write_study_csv(path: str, cells) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "seed", "max_d0_residual", "steps", "status"])
        for c in cells:
            w.writerow([repr(c.lam), c.seed, repr(c.max_d0), c.steps,
                        c.status])


def write_study_json(path: str, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1)
