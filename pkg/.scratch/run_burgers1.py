"""Retrain branch 1 under current init/weights; save best theta."""
import json
import time

import numpy as np

from selfsim import train as TR
from selfsim import loss as LO
from selfsim import sampling as S
from selfsim.equations import BurgersSystem, burgers_lambda
from selfsim.net import NetworkSpec
from selfsim.validate import standard_grid


def run(branch, steps, out):
    t0 = time.time()
    system = BurgersSystem(branch=branch,
                           net=NetworkSpec(widths=(24, 24), head="signed_exp"))
    lam = burgers_lambda(branch)
    res = TR.train_profile(system, lam, steps=steps, seed=42,
                           sampler=S.default_sampler(scale=0.3, period=1500),
                           monitor_every=500)
    th = res.best_theta
    grid = standard_grid(lam)
    r = LO.pointwise_residuals(system, th, lam, grid, 2)
    row = {"branch": branch, "lam": lam, "steps": steps,
           "best_step": res.best_step,
           "max_d0": float(np.abs(r[..., 0]).max()),
           "max_d1": float(np.abs(r[..., 1]).max()),
           "max_d2": float(np.abs(r[..., 2]).max()),
           "defect": LO.constraint_defect(system, th, lam),
           "minutes": (time.time() - t0) / 60.0}
    np.save(out, th)
    print("b%d done" % branch, json.dumps(row), flush=True)
    return row


if __name__ == "__main__":
    rows = [run(1, 9000, ".scratch/burgers1_theta.npy")]
    json.dump(rows, open(".scratch/burgers1_log.json", "w"), indent=1)
