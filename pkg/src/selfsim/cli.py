"""Command-line entry point.

Subcommands: train, funnel, lambda-study, multistage, stability,
predict-lambda, evaluate, resume.  Every run resolves one config
(file + --set overrides), writes it with its content hash into the
output directory, and stamps that hash into every artifact it emits.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys

if os.environ.get("SELFSIM_THREADS"):
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
               "MKL_NUM_THREADS"):
        os.environ.setdefault(_v, os.environ["SELFSIM_THREADS"])

import numpy as np

from . import checkpoint as CK
from . import config as C
from . import lambdactl as LC
from . import train as TR
from .errors import ConfigError, ContractError, NumericsError


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="selfsim",
        description="Self-similar blow-up profiles by residual training")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, needs_from=False):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--set", action="append", default=[], dest="sets",
                       metavar="KEY=VALUE", help="dotted config override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if needs_from:
            p.add_argument("--from", dest="source", required=True,
                           help="checkpoint base path (no extension)")

    common(sub.add_parser("train", help="single-stage residual training"))
    common(sub.add_parser("funnel", help="secant loop on the exponent"))
    common(sub.add_parser("lambda-study",
                          help="offset x seed validation funnel"))
    common(sub.add_parser("multistage",
                          help="frequency-tuned correction stage"),
           needs_from=True)
    common(sub.add_parser("stability", help="linearized spectrum and modes"),
           needs_from=True)
    common(sub.add_parser("evaluate", help="residual report for a checkpoint"),
           needs_from=True)
    common(sub.add_parser("resume", help="continue an interrupted run"),
           needs_from=True)
    pl = sub.add_parser("predict-lambda",
                        help="empirical-fit exponent prediction")
    pl.add_argument("--system", required=True)
    pl.add_argument("--n", type=int, required=True)
    sub.choices["evaluate"].add_argument("--force", action="store_true",
                                         help="ignore config hash mismatch")
    return top


def _resolve(args) -> tuple:
    cfg = C.load_config(args.config, args.sets)
    if args.seed is not None:
        cfg["run"]["seed"] = int(args.seed)
    if args.out is not None:
        cfg["run"]["out"] = args.out
    out = cfg["run"]["out"]
    os.makedirs(out, exist_ok=True)
    h = C.config_hash(cfg)
    with open(os.path.join(out, "config.toml"), "w") as fh:
        fh.write(f"# config_hash={h}\n" + C.canonical_dump(cfg))
    return cfg, h, out


def _report(out: str, name: str, payload: dict, h: str) -> None:
    payload = dict(payload)
    payload["config_hash"] = h
    with open(os.path.join(out, name), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)


def _evaluation(system, theta, lam, cfg) -> dict:
    from .validate import (ansatz_profile_evaluator, evaluation_report,
                           profile_error_vs_oracle)
    rule = _hilbert_rule(system)
    rep = evaluation_report(system, theta, lam, rule=rule)
    if cfg["run"]["system"] == "burgers":
        err, gauge = profile_error_vs_oracle(
            ansatz_profile_evaluator(system, theta, lam),
            cfg["run"]["branch"])
        rep["profile_sup_error"] = err
        rep["gauge"] = gauge
    return rep


def _hilbert_rule(system):
    if not system.needs_hilbert:
        return None
    from .hilbert import HilbertRule
    return HilbertRule(1024)


def cmd_train(args) -> int:
    cfg, h, out = _resolve(args)
    system = C.build_system(cfg)
    strategy = cfg["lambda"]["strategy"]
    if strategy == "funnel":
        raise ConfigError("lambda.strategy=funnel belongs to the funnel "
                          "subcommand")
    metrics = TR.MetricsWriter(os.path.join(out, "metrics.csv"), h)
    try:
        res = TR.train_profile(
            system, cfg["lambda"]["value"], steps=cfg["budget"]["steps"],
            seed=cfg["run"]["seed"], sampler=C.sampler_spec(cfg),
            loss_cfg=C.loss_config(cfg), gn_cfg=C.gn_config(cfg),
            strategy=strategy, schedule=cfg["lambda"]["schedule"],
            interval=tuple(cfg["lambda"]["interval"]),
            optimizer=cfg["optimizer"]["kind"], lr=cfg["optimizer"]["lr"],
            monitor_every=cfg["budget"]["monitor_every"], metrics=metrics,
            checkpoint_base=os.path.join(out, "checkpoint"),
            checkpoint_every=cfg["budget"]["checkpoint_every"],
            config_hash=h)
    finally:
        metrics.close()
    theta = res.theta[:-1] if strategy == "trainable" else res.theta
    rep = _evaluation(system, theta, res.lam, cfg)
    rep.update(best_max_d0=res.best_max_d0, best_step=res.best_step,
               steps=res.steps, **{"lambda": res.lam})
    _report(out, "report.json", rep, h)
    return 0


def cmd_funnel(args) -> int:
    cfg, h, out = _resolve(args)
    system = C.build_system(cfg)
    metrics = TR.MetricsWriter(os.path.join(out, "metrics.csv"), h)
    try:
        fres, tres = TR.funnel_train(
            system, cfg["lambda"]["value"],
            init_steps=cfg["lambda"]["init_steps"],
            relax_steps=cfg["lambda"]["relax_steps"],
            delta=cfg["lambda"]["delta"], tol=cfg["lambda"]["tolerance"],
            max_rounds=cfg["lambda"]["max_rounds"],
            interval=tuple(cfg["lambda"]["interval"]),
            seed=cfg["run"]["seed"], sampler=C.sampler_spec(cfg),
            loss_cfg=C.loss_config(cfg), gn_cfg=C.gn_config(cfg),
            metrics=metrics)
    finally:
        metrics.close()
    if tres is not None:
        CK.save_checkpoint(os.path.join(out, "checkpoint-final"),
                           theta=tres.theta, lam=fres.lam, step=tres.steps,
                           system=system, config_hash=h, state=tres.state)
    if not fres.converged:
        _report(out, "report.json",
                {"converged": False, "lambda": fres.lam,
                 "rounds": fres.rounds,
                 "history": fres.history.entries}, h)
        return 3
    _report(out, "report.json",
            {"converged": True, "lambda": fres.lam, "rounds": fres.rounds,
             "history": fres.history.entries}, h)
    return 0


def cmd_lambda_study(args) -> int:
    cfg, h, out = _resolve(args)
    offsets = LC.symlog_offsets()
    seeds = [cfg["run"]["seed"] + i for i in range(5)]
    recipe = {"system": cfg["run"]["system"], "branch": cfg["run"]["branch"],
              "widths": cfg["network"]["widths"],
              "head": cfg["network"]["head"],
              "scale": cfg["sampler"]["scale"],
              "period": cfg["sampler"]["period"],
              "steps": cfg["budget"]["steps"]}
    run_cell = functools.partial(TR.profile_study_cell, recipe=recipe)
    workers = int(os.environ.get("SELFSIM_WORKERS", "1"))
    cells, summary = LC.lambda_study(cfg["lambda"]["value"], offsets, seeds,
                                     run_cell, workers=workers)
    LC.write_study_csv(os.path.join(out, "study.csv"), cells)
    summary["config_hash"] = h
    LC.write_study_json(os.path.join(out, "study.json"), summary)
    return 0


def cmd_multistage(args) -> int:
    cfg, h, out = _resolve(args)
    from . import multistage as MS
    system = C.build_system(cfg)
    ck = CK.load_checkpoint(args.source)
    CK.check_arch(ck, system)
    theta1 = ck["arrays"]["theta"]
    lam = ck["lambda"]
    res = MS.run_stage2(system, theta1, lam, rule=_hilbert_rule(system),
                        seed=cfg["run"]["seed"],
                        steps=cfg["budget"]["steps"],
                        scale=cfg["sampler"]["scale"])
    _report(out, "report.json",
            {"max_d0_before": res.max_d0_before,
             "max_d0_after": res.max_d0_after,
             "factor": res.factor, "improved": res.improved,
             "eps": res.eps, "dominant_frequency": res.f_d,
             "sigma": res.sigma, "lambda": lam,
             "lineage": ck.get("lineage", []) + [ck.get("config_hash", "")]},
            h)
    np.save(os.path.join(out, "stage2_theta.npy"), res.theta2)
    return 0


def cmd_stability(args) -> int:
    cfg, h, out = _resolve(args)
    from . import stability as ST
    system = C.build_system(cfg)
    ck = CK.load_checkpoint(args.source)
    CK.check_arch(ck, system)
    theta = ck["arrays"]["theta"]
    lam = ck["lambda"]
    branch = cfg["run"]["branch"]
    pairs, found = [], []
    for attempt in range(max(branch, 1)):
        pair = ST.train_eigenpair(system, theta, lam, mu_init=0.5,
                                  deflation=tuple(found),
                                  seed=cfg["run"]["seed"] + attempt)
        pairs.append(pair)
        if not pair.rejected and pair.residual_max <= 1e-4:
            found.append(pair)
    rep = ST.spectrum_report(system, theta, lam, branch, pairs=pairs,
                             seed=cfg["run"]["seed"])
    _report(out, "spectrum.json", rep, h)
    return 0


def cmd_predict_lambda(args) -> int:
    val = LC.predict_lambda(args.system, args.n)
    print(f"{val:.10f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, h, out = _resolve(args)
    system = C.build_system(cfg)
    ck = CK.load_checkpoint(args.source)
    CK.check_arch(ck, system)
    CK.check_config_hash(ck, h, force=args.force)
    rep = _evaluation(system, ck["arrays"]["theta"], ck["lambda"], cfg)
    rep["lambda"] = ck["lambda"]
    rep["step"] = ck["step"]
    _report(out, "evaluation.json", rep, h)
    print(json.dumps({k: rep[k] for k in ("max_d0", "max_d1", "max_d2")},
                     default=float))
    return 0


def cmd_resume(args) -> int:
    cfg, h, out = _resolve(args)
    system = C.build_system(cfg)
    ck = CK.load_checkpoint(args.source)
    CK.check_arch(ck, system)
    CK.check_config_hash(ck, h)
    state = CK.restore_state(ck, C.gn_config(cfg))
    remaining = cfg["budget"]["steps"] - ck["step"]
    if remaining <= 0:
        raise ConfigError(f"budget {cfg['budget']['steps']} steps already "
                          f"spent at checkpointed step {ck['step']}")
    metrics = TR.MetricsWriter(os.path.join(out, "metrics.csv"), h)
    try:
        res = TR.train_profile(
            system, ck["lambda"], steps=remaining, seed=cfg["run"]["seed"],
            theta0=ck["arrays"]["theta"], state=state,
            start_step=ck["step"], sampler=C.sampler_spec(cfg),
            loss_cfg=C.loss_config(cfg), gn_cfg=C.gn_config(cfg),
            strategy=cfg["lambda"]["strategy"],
            schedule=cfg["lambda"]["schedule"],
            interval=tuple(cfg["lambda"]["interval"]),
            optimizer=cfg["optimizer"]["kind"], lr=cfg["optimizer"]["lr"],
            monitor_every=cfg["budget"]["monitor_every"], metrics=metrics,
            checkpoint_base=os.path.join(out, "checkpoint"),
            checkpoint_every=cfg["budget"]["checkpoint_every"],
            config_hash=h)
    finally:
        metrics.close()
    theta = (res.theta[:-1] if cfg["lambda"]["strategy"] == "trainable"
             else res.theta)
    rep = _evaluation(system, theta, res.lam, cfg)
    rep.update(steps=res.steps, resumed_from=ck["step"],
               **{"lambda": res.lam})
    _report(out, "report.json", rep, h)
    return 0


COMMANDS = {"train": cmd_train, "funnel": cmd_funnel,
            "lambda-study": cmd_lambda_study, "multistage": cmd_multistage,
            "stability": cmd_stability, "predict-lambda": cmd_predict_lambda,
            "evaluate": cmd_evaluate, "resume": cmd_resume}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericsError, ContractError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
