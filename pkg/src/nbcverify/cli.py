"""Command-line entry point: ``nbcverify <verb> [flags]``.

Verbs: train, verify, analyze, attack, report, experiment.  ``verify`` exits
0 (UNSAT), 1 (SAT) or 2 (UNKNOWN); any error exits with 3.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import pgd_accuracy, pgd_attack
from .bab import Budget, VerifierConfig, bab_verify, check_counterexample
from .bounds import classify_neurons, compute_bounds, ibp_bounds, linear_bounds, stable_percent
from .data import load_model, load_property
from .experiment import (ExperimentConfig, desk_mnist_config, load_datasets, make_properties,
                         obtain_model, read_metrics_csv, report_render, run_experiment,
                         synthetic_config)
from .training import accuracy

ERROR_EXIT = 3
PRESETS = {"desk-mnist": desk_mnist_config, "synthetic": synthetic_config}


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = PRESETS[getattr(args, "preset", None) or "desk-mnist"]()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = args.out
    if getattr(args, "radius", None):
        updates["radii"] = list(args.radius)
    if getattr(args, "jobs", None) is not None:
        updates["jobs"] = args.jobs
    budget = _budget(args, cfg.budget)
    if budget is not None:
        updates["budget"] = budget
    return replace(cfg, **updates) if updates else cfg


def _budget(args, default=None):
    secs = getattr(args, "budget_seconds", None)
    branches = getattr(args, "budget_branches", None)
    if secs is None and branches is None:
        return default
    base = default or Budget()
    return Budget(secs if secs is not None else base.seconds,
                  branches if branches is not None else base.branches)


def _properties(args, net) -> list:
    if args.property:
        props = [load_property(p, net.output_dim) for p in args.property]
        if args.radius:
            props = [replace(p, epsilon=float(args.radius[0])) for p in props]
        return props
    if not args.config:
        raise SystemExit("need --property files or --config to draw test properties")
    cfg = ExperimentConfig.load(args.config)
    _, test = load_datasets(cfg.dataset, cfg.seed)
    radius = float(args.radius[0]) if args.radius else cfg.radii[0]
    return make_properties(test, cfg.k, radius, cfg.train.domain)


# -- verbs ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_datasets(cfg.dataset, cfg.seed)
    names = args.method or list(cfg.methods)
    for name in names:
        if name not in cfg.methods:
            raise SystemExit(f"unknown method {name!r}; configured: {list(cfg.methods)}")
        net = obtain_model(name, cfg, train_ds, test_ds, out)
        print(f"{name}: test_acc={accuracy(net, test_ds):.4f} model={out / 'models' / (name + '.json')}")
    return 0


def cmd_verify(args) -> int:
    net = load_model(args.model)
    if not args.property:
        raise SystemExit("verify needs --property")
    prop = load_property(args.property[0], net.output_dim)
    if args.radius:
        prop = replace(prop, epsilon=float(args.radius[0]))
    seed = 0 if args.seed is None else args.seed
    verdict = bab_verify(net, prop, _budget(args, Budget()), VerifierConfig(seed=seed))
    doc = verdict.to_json()
    if verdict.counterexample is not None:
        doc["counterexample_valid"] = check_counterexample(net, prop, verdict.counterexample)
    text = json.dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
    print(f"{verdict.status} branches={verdict.stats['branches_explored']} "
          f"time={verdict.stats['wall_time']:.3f}s")
    if not args.out:
        print(text)
    return verdict.exit_code


def cmd_analyze(args) -> int:
    net = load_model(args.model)
    props = _properties(args, net)
    fn = {"intersected": compute_bounds, "ibp": ibp_bounds, "linear": linear_bounds}[args.method]
    per_prop = [classify_neurons(fn(net, p.box)).to_json() for p in props]
    doc = {"stable_pct": stable_percent(net, props, args.method), "method": args.method,
           "n_props": len(props), "properties": per_prop}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(f"stable%={doc['stable_pct']:.2f} over {len(props)} properties ({args.method})")
    return 0


def cmd_attack(args) -> int:
    net = load_model(args.model)
    seed = 0 if args.seed is None else args.seed
    if args.property:
        prop = load_property(args.property[0], net.output_dim)
        eps = float(args.radius[0]) if args.radius else prop.epsilon
        xa = pgd_attack(net, prop.x0, prop.label, eps, args.steps, args.step_size, prop.domain,
                        seed, args.restarts)
        found = check_counterexample(net, replace(prop, epsilon=eps), xa)
        print(json.dumps({"counterexample_found": found,
                          "x_adv": np.asarray(xa).ravel().tolist() if found else None}))
        return 0
    if not args.config:
        raise SystemExit("attack needs --property or --config")
    cfg = ExperimentConfig.load(args.config)
    _, test = load_datasets(cfg.dataset, cfg.seed)
    eps = float(args.radius[0]) if args.radius else cfg.radii[0]
    acc = pgd_accuracy(net, test.inputs.reshape(len(test), -1), test.labels, eps, args.steps,
                       args.step_size, cfg.train.domain, seed, args.restarts)
    print(f"pgd{args.steps}_acc={acc:.4f} eps={eps:g} n={len(test)}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.out or ".")
    if path.is_dir():
        path = path / "metrics.csv"
    text, _ = report_render(read_metrics_csv(path))
    print(text, end="")
    return 0


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    text, _ = report_render(report)
    print(text, end="")
    for method, stage, err in report.errors:
        print(f"error: {method} [{stage}]: {err}", file=sys.stderr)
    print(f"wrote {Path(cfg.out) / 'metrics.csv'}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbcverify", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, model=False, prop=False):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory or file")
        sp.add_argument("--radius", type=float, action="append",
                        help="verification radius (repeatable for experiment)")
        if model:
            sp.add_argument("--model", required=True, help="model JSON")
        if prop:
            sp.add_argument("--property", action="append", help="property JSON (repeatable)")

    sp = sub.add_parser("train", help="train configured methods and save models")
    common(sp)
    sp.add_argument("--preset", choices=sorted(PRESETS), default="desk-mnist")
    sp.add_argument("--method", action="append", help="restrict to these methods")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("verify", help="branch-and-bound verification of one property")
    common(sp, model=True, prop=True)
    sp.add_argument("--budget-seconds", type=float)
    sp.add_argument("--budget-branches", type=int)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("analyze", help="neuron stability over property boxes")
    common(sp, model=True, prop=True)
    sp.add_argument("--method", choices=["intersected", "ibp", "linear"], default="intersected")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("attack", help="PGD attack / PGD accuracy")
    common(sp, model=True, prop=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--step-size", type=float)
    sp.add_argument("--restarts", type=int, default=1)
    sp.set_defaults(fn=cmd_attack)

    sp = sub.add_parser("report", help="render metrics.csv as a table")
    sp.add_argument("--out", help="experiment directory or metrics.csv path")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("experiment", help="full train + verify + metrics pipeline")
    common(sp)
    sp.add_argument("--preset", choices=sorted(PRESETS), default="desk-mnist")
    sp.add_argument("--budget-seconds", type=float)
    sp.add_argument("--budget-branches", type=int)
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors must not collide with verdict codes
        return 0 if exc.code in (0, None) else ERROR_EXIT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.fn(args))
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return ERROR_EXIT
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR_EXIT


if __name__ == "__main__":
    sys.exit(main())
