"""Command-line entry point: ``care {aggregate,synth,bench,check-theory}``.

Exit status is 0 on success, 2 for input or configuration errors and 3 for
numerical failures. ``CARE_SEED`` sets the default seed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, harness, partition as part_mod, pipeline, synth
from .dataio import _jsonable, load_csv, split as make_split, write_csv, write_report
from .errors import CareError, InputError, NumericalError

log = logging.getLogger("care")

REGIMES = {
    "a": (synth.RegimeAConfig, synth.gen_regime_a),
    "b": (synth.RegimeBConfig, synth.gen_regime_b),
    "graph": (synth.PlantedGraphConfig, synth.gen_planted_graph),
    "gaussian": (synth.GaussianModelConfig, synth.gen_gaussian_model),
}


def default_seed() -> int:
    raw = os.environ.get("CARE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"CARE_SEED must be an integer, got {raw!r}") from None


def _parse_value(text: str):
    try:
        val = json.loads(text)
    except json.JSONDecodeError:
        return text
    return tuple(val) if isinstance(val, list) else val


def parse_params(items, config_cls=None) -> dict:
    """``k=v`` pairs; values are parsed as JSON where possible and checked against ``config_cls``."""
    out = {}
    names = {f.name for f in dataclasses.fields(config_cls)} if config_cls else None
    for item in items or ():
        if "=" not in item:
            raise InputError(f"--param expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if names is not None and key not in names:
            raise InputError(f"unknown parameter {key!r}; expected one of {sorted(names)}")
        out[key] = _parse_value(val)
    return out


def _threshold(text: str):
    if text == "mean":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or 'mean', got {text!r}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- aggregate

def _load_anchor_means(path, judge_names) -> np.ndarray:
    anchors = load_csv(path)
    missing = set(judge_names) - set(anchors.judge_names)
    if missing:
        raise InputError(f"anchor file lacks judges {sorted(missing)}")
    cols = [anchors.judge_names.index(j) for j in judge_names]
    vals = anchors.values[:, cols]
    if vals.shape[0] != 4:
        raise InputError(f"anchor file needs 4 prototype rows in (q, c) order, got {vals.shape[0]}")
    return vals


def cmd_aggregate(args) -> dict:
    t0 = time.perf_counter()
    task = args.task
    m = load_csv(args.input, truth_column=args.truth_col, task_kind=task or "scoring")
    if task is None and m.truth is not None and np.isin(m.truth, (0.0, 1.0)).all():
        m = dataclasses.replace(m, task_kind="binary")
    seed = args.seed
    method = args.method
    params: dict = {}
    if args.threshold is not None:
        params["threshold"] = args.threshold
    if method == "care-svd":
        params.update(rule=args.rule, weights=args.weights, calibrate=bool(args.calibrate))
    if method == "care-tensor":
        params.update(eps=args.eps, partition_restarts=args.partition_restarts, rank=args.rank,
                      cp_restarts=args.restarts, em_refine=bool(args.em_refine),
                      min_view_size=args.min_view_size)
        if args.anchors:
            params["anchor_means"] = _load_anchor_means(args.anchors, m.judge_names)
    if args.gamma_n is not None:
        params["gamma_n"] = args.gamma_n
    if args.tau is not None:
        params["tau"] = args.tau

    sp = None
    grid_info = None
    if m.truth is not None and method.startswith("care") and (args.rule == "anchor" or args.grid):
        sp = make_split(m, args.val_frac, seed)
    if method == "care-svd" and args.rule == "anchor":
        if sp is None:
            raise InputError("--rule anchor needs --truth-col for the labeled anchor rows")
        # labeled validation rows double as anchors; passed as values so they
        # stay valid when the grid search fits on the training rows only
        params["anchors"] = (m.subset(sp.val_idx), m.truth[sp.val_idx])
    tuned = (method.startswith("care") and m.truth is not None and args.grid
             and args.gamma_n is None and args.tau is None)
    if tuned:
        gr = harness.grid_search(m, method, split=sp, seed=seed, base_params=params)
        params.update(gr.best)
        grid_info = {"selected": gr.best, "validation": gr.report.aggregate,
                     "points": gr.report.extra["points"]}
    elif method == "care-svd":
        params.setdefault("gamma_n", pipeline.SVD_DEFAULTS["gamma_n"])
        params.setdefault("tau", pipeline.SVD_DEFAULTS["tau"])
    elif method == "care-tensor":
        params.setdefault("gamma_n", pipeline.TENSOR_DEFAULTS["gamma_n"])
        params.setdefault("tau", pipeline.TENSOR_DEFAULTS["tau"])

    predict, info = harness.fit_method(method, m, params, seed=seed)
    out = predict(m)
    metrics = {}
    if m.truth is not None:
        binary = m.task_kind == "binary"
        if binary:
            metrics["accuracy"] = harness.accuracy(out.labels, m.truth)
            metrics["mae"] = harness.mae(out.labels, m.truth)
            if (m.truth == 0).any():
                metrics["fpr"] = harness.fpr(out.labels, m.truth)
        else:
            metrics["mae"] = harness.mae(out.scores, m.truth)
        if sp is not None:
            val = m.subset(sp.val_idx)
            metrics["validation"] = harness.evaluate(predict(val), val.truth, binary)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["item", "score"] + (["label"] if out.labels is not None else []) + (
            ["truth"] if m.truth is not None else [])
        w.writerow(header)
        for i in range(m.n):
            row = [i, repr(float(out.scores[i]))]
            if out.labels is not None:
                row.append(int(out.labels[i]))
            if m.truth is not None:
                row.append(repr(float(m.truth[i])))
            w.writerow(row)
    resolved = {k: v for k, v in params.items() if k not in ("anchor_means", "anchors")}
    config = {"subcommand": "aggregate", "input": str(args.input), "method": method,
              "truth_col": args.truth_col, "task": m.task_kind, "seed": seed,
              "val_frac": args.val_frac, "grid": args.grid, "anchors": args.anchors,
              "params": resolved, "out": str(outdir)}
    report = write_report(outdir / "report.json", method=method, params={**resolved, **info},
                          metrics=metrics, per_item_scores=out.scores, seed=seed,
                          config=config, grid_search=grid_info, n_items=m.n,
                          n_dropped=m.n_dropped, schema_version=harness.SCHEMA_VERSION,
                          wall_time=time.perf_counter() - t0)
    return report


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> dict:
    cfg_cls, gen = REGIMES[args.regime]
    params = parse_params(args.param, cfg_cls)
    params["seed"] = args.seed
    if args.regime == "gaussian":
        params.setdefault("n", 1000)
    cfg = cfg_cls(**params)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data = gen(cfg)
    # no output path here, so files written to different directories stay identical
    config = {"subcommand": "synth", "regime": args.regime, "config": dataclasses.asdict(cfg)}
    if args.regime == "gaussian":
        from .dataio import from_array
        m = from_array(data.samples, [f"j{j + 1}" for j in range(data.samples.shape[1])])
        write_csv(m, outdir / "scores.csv")
        truth = {"sigma": data.sigma, "l": data.l, "s": data.s, "k_jh": data.k_jh,
                 "k_jh_base": data.k_jh_base, "k_hh": data.k_hh, "eigengap": data.eigengap}
    else:
        write_csv(data.scores, outdir / "scores.csv")
        truth = {"q": data.q, "c": data.c, "means": data.means, "weights": data.weights,
                 "state_order": ["q0c0", "q0c1", "q1c0", "q1c1"],
                 "partition": [g.tolist() for g in data.partition.groups]
                 if data.partition is not None else None}
        truth.update({k: v for k, v in data.extra.items()})
    _write_json(outdir / "ground_truth.json", {"config": config, **truth})
    return config


# ---------------------------------------------------------------- bench / theory

def cmd_bench(args) -> dict:
    fn = harness.EXPERIMENTS[args.experiment]
    params = parse_params(args.param)
    allowed = set(fn.__code__.co_varnames[:fn.__code__.co_argcount]) - {"seeds"}
    bad = set(params) - allowed
    if bad:
        raise InputError(f"unknown parameter(s) {sorted(bad)} for {args.experiment}; "
                         f"expected {sorted(allowed)}")
    seeds = range(args.seed, args.seed + args.seeds)
    report = fn(seeds=seeds, **params).to_dict()
    report["config"].update({"subcommand": "bench", "experiment": args.experiment,
                             "seeds": list(seeds), "params": params, "out": str(args.out)})
    _write_json(Path(args.out) / "report.json", report)
    if args.experiment == "d9":
        print(f"d9 error ratio (random / graph-aware): {report['extra']['ratio']:.2f}")
    return report


def cmd_check_theory(args) -> dict:
    report = harness.theorem_suite(args.seeds).to_dict()
    report["config"].update({"subcommand": "check-theory", "seeds": args.seeds,
                             "out": str(args.out)})
    _write_json(Path(args.out) / "report.json", report)
    for name, res in report["extra"]["checks"].items():
        print(f"{name}: {'pass' if res['passed'] else 'FAIL'}")
    return report


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="care", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: $CARE_SEED or 0)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("aggregate", help="aggregate a judge-score CSV")
    p.add_argument("input", help="CSV with one column per judge")
    p.add_argument("--method", choices=harness.METHODS, default="care-svd")
    p.add_argument("--truth-col", default=None, help="name of the ground-truth column")
    p.add_argument("--task", choices=("scoring", "binary", "preference"), default=None,
                   help="task kind (default: binary if truth is 0/1, else scoring)")
    p.add_argument("--threshold", type=_threshold, default=None,
                   help="score threshold for binary decisions, or 'mean' "
                        "(default: 4.5 for votes, the mean score otherwise)")
    p.add_argument("--gamma-n", type=float, default=None, help="sparse penalty weight")
    p.add_argument("--tau", type=float, default=None, help="nuclear-to-sparse penalty ratio")
    p.add_argument("--no-grid", dest="grid", action="store_false",
                   help="skip the validation grid search even when truth is present")
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--rule", choices=("leading", "balanced", "anchor"), default="leading")
    p.add_argument("--weights", choices=("plain", "subtracted"), default="plain")
    p.add_argument("--calibrate", type=int, choices=(0, 1), default=1)
    p.add_argument("--eps", type=float, default=part_mod.DEFAULT_EPS)
    p.add_argument("--partition-restarts", type=int, default=part_mod.DEFAULT_RESTARTS)
    p.add_argument("--min-view-size", type=int, default=None)
    p.add_argument("--restarts", type=int, default=16, help="CP restarts")
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--em-refine", type=int, choices=(0, 1), default=0)
    p.add_argument("--anchors", default=None, help="CSV of 4 prototype rows in (q, c) order")
    common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("synth", help="write a synthetic dataset and its ground truth")
    p.add_argument("--regime", choices=tuple(REGIMES), required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="config override")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="run a benchmark sweep")
    p.add_argument("--experiment", choices=tuple(harness.EXPERIMENTS), required=True)
    p.add_argument("--seeds", type=int, default=None,
                   help="number of seeds (default 10, 25 for regime-b)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check-theory", help="run the theory checks")
    p.add_argument("--seeds", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_check_theory)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = default_seed()
        if getattr(args, "seeds", 1) is None:
            args.seeds = 25 if args.experiment == "regime-b" else 10
        if getattr(args, "seeds", 1) < 1:
            raise InputError("--seeds must be positive")
        args.func(args)
    except CareError as exc:
        print(f"care: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"care: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except (OSError, TypeError) as exc:
        print(f"care: error: {exc}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
