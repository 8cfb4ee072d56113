"""Train Burgers branches 2 and 3 to the residual bar, save best thetas."""
import json
import time

import numpy as np

from selfsim.equations import BurgersSystem
from selfsim.net import NetworkSpec
from selfsim import loss as LO, sampling as S, train as TR

OUT = "/root/pkg/.scratch"


def run(branch: int, lam: float, steps: int) -> dict:
    spec = NetworkSpec(widths=(24, 24), head="signed_exp")
    system = BurgersSystem(branch=branch, net=spec)
    t0 = time.time()
    res = TR.train_profile(
        system, lam, steps=steps, seed=42,
        sampler=S.default_sampler(0.3, 1500),
        loss_cfg=LO.LossConfig(), monitor_every=500)
    grid = TR.monitor_grid(lam)
    r = LO.pointwise_residuals(system, res.best_theta, lam, grid, 2)
    d = LO.constraint_defect(system, res.best_theta, lam)
    out = {
        "branch": branch, "lam": lam, "steps": res.steps,
        "best_step": res.best_step,
        "max_d0": float(np.abs(r[..., 0]).max()),
        "max_d1": float(np.abs(r[..., 1]).max()),
        "max_d2": float(np.abs(r[..., 2]).max()),
        "defect": d, "minutes": (time.time() - t0) / 60.0,
    }
    np.save(f"{OUT}/burgers{branch}_theta.npy", res.best_theta)
    print(f"b{branch} done", json.dumps(out), flush=True)
    return out


if __name__ == "__main__":
    logs = [run(2, 0.25, 12000), run(3, 1.0 / 6.0, 15000)]
    with open(f"{OUT}/burgers23_log.json", "w") as fh:
        json.dump(logs, fh, indent=1)
