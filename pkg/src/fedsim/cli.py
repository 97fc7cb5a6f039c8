"""Command-line front end.

Four subcommands: run (one experiment, JSONL metrics + JSON summary), sweep
(grid over alpha/tau/eta/seed, CSV), verify-bound (generalization-bound and
participation-identity checks, JSON report), consensus-trace (per-step
per-block consensus, CSV + JSON summary). Every output file starts with a
provenance header carrying the config digest, seed, and package version.
Exit codes: 0 success (and, for verify-bound, all checks passed), 1 config
error, 2 divergence.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bounds import verify_participation_identities, verify_theorem1
from .config import (
    ConfigError,
    ExperimentConfig,
    bound_config_digest,
    build_bound_trial_config,
    build_shards,
    load_bound_config,
    load_config,
)
from .data import GaussianLinear
from .engine import DivergenceError, comm_closed_form, run_experiment
from .metrics import accuracy, empirical_risk, population_risk_estimate
from .models import RidgeSpec, build_layout

WORKERS_ENV = "FEDSIM_WORKERS"


def _provenance(digest: str, seed: int) -> dict:
    return {"config_digest": digest, "seed": seed, "version": __version__}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _execute(cfg: ExperimentConfig, seed: int, *, cadence=None, on_record=None,
             record_round_trace=False):
    model = cfg.model_spec()
    shards, pop_source = build_shards(cfg, seed)
    result = run_experiment(
        cfg.algorithm,
        model,
        shards,
        cfg.schedule_spec(),
        seed=seed,
        representation_layers=cfg.representation_layers,
        weights=cfg.weights,
        participation=cfg.participation_spec(),
        batches_with_replacement=cfg.canonical["data"]["batches_with_replacement"],
        pop_source=pop_source,
        consensus_every=cfg.cadence if cadence is None else cadence,
        risk_every_sync=cfg.risks_at_sync,
        per_client_risks=cfg.per_client_risks,
        record_round_trace=record_round_trace,
        on_record=on_record,
    )
    return model, shards, pop_source, result


def _final_metrics(cfg, model, shards, pop_source, result) -> dict:
    w = cfg.weights
    train = empirical_risk(model, result.final_params, shards, w)
    test = acc = None
    if pop_source is not None:
        test, _ = population_risk_estimate(model, result.final_params, pop_source, w)
        if not isinstance(model, RidgeSpec) and not isinstance(pop_source, GaussianLinear):
            xs = np.vstack([s.X for s in pop_source])
            ys = np.concatenate([s.y for s in pop_source])
            acc = accuracy(model, result.final_params, xs, ys)
    return {
        "final_train_risk": train,
        "final_test_risk": test,
        "final_gen_gap": None if test is None else test - train,
        "accuracy": acc,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out_dir = args.out if args.out is not None else cfg.output
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(cfg.digest(), seed)

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    started = time.monotonic()
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"provenance": prov}) + "\n")

        def sink(r, s, rec):
            fh.write(_dump(rec.to_row()) + "\n")

        model, shards, pop_source, result = _execute(
            cfg, seed, cadence=args.cadence, on_record=sink
        )
    elapsed = time.monotonic() - started

    summary = {"provenance": prov, "algorithm": cfg.algorithm, "seed": seed,
               "steps": result.steps, "rounds": cfg.canonical["schedule"]["rounds"]}
    summary.update(_final_metrics(cfg, model, shards, pop_source, result))
    summary["final_consensus"] = {
        b.name: cval for b, cval in zip(result.layout.blocks, _final_consensus(result))
    }
    summary["comm"] = {
        "uploaded_per_client": [int(x) for x in result.comm.uploaded],
        "downloaded_per_client": [int(x) for x in result.comm.downloaded],
        "total_uploaded": result.comm.total_uploaded,
        "closed_form_per_client_per_direction": comm_closed_form(
            cfg.schedule_spec(), result.layout
        ),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"run finished in {elapsed:.2f}s; outputs in {out_dir}", file=sys.stderr)
    print(f"wrote {metrics_path} and {os.path.join(out_dir, 'summary.json')}")
    return 0


def _final_consensus(result):
    from .metrics import consensus_distance

    return [
        consensus_distance(result.client_params, block=b.name) for b in result.layout.blocks
    ]


GRID_KEYS = ("alpha", "tau", "eta", "seed")


def parse_grid(spec: str) -> list[tuple[str, list]]:
    """Parse "alpha=1,5;tau=10;eta=0.1,0.2;seed=1,2,3" into ordered axes."""
    axes = []
    seen = set()
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"grid entry {part!r} is not key=v1,v2,...")
        key, _, vals = part.partition("=")
        key = key.strip()
        if key not in GRID_KEYS:
            raise ConfigError(f"grid key must be one of {GRID_KEYS}, got {key!r}.")
        if key in seen:
            raise ConfigError(f"grid key {key!r} given twice.")
        seen.add(key)
        parsed = []
        for v in vals.split(","):
            v = v.strip()
            try:
                parsed.append(float(v) if key == "eta" else int(v))
            except ValueError as exc:
                raise ConfigError(f"grid value {v!r} for {key!r} is not a number.") from exc
        if not parsed:
            raise ConfigError(f"grid key {key!r} has no values.")
        axes.append((key, parsed))
    if not axes:
        raise ConfigError("empty grid.")
    return axes


def _sweep_point(payload):
    """Run one grid point (all its seeds); module-level so workers can pickle it."""
    from .config import parse_config

    canonical, seeds = payload
    cfg = parse_config(canonical)
    trains, tests, accs = [], [], []
    for seed in seeds:
        model, shards, pop_source, result = _execute(
            cfg, seed, cadence=0, record_round_trace=False
        )
        final = _final_metrics(cfg, model, shards, pop_source, result)
        trains.append(final["final_train_risk"])
        tests.append(final["final_test_risk"])
        accs.append(final["accuracy"])
    layout = build_layout(cfg.model_spec(), cfg.representation_layers)
    comm = comm_closed_form(cfg.schedule_spec(), layout)
    return trains, tests, accs, comm, result.steps


def _mean_std(values) -> tuple[float | None, float | None]:
    if any(v is None for v in values):
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(arr))
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        base_seeds = [args.seed]
    else:
        base_seeds = cfg.seeds
    axes = parse_grid(args.grid)
    out_dir = args.out if args.out is not None else cfg.output
    os.makedirs(out_dir, exist_ok=True)

    points = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        overrides = dict(zip((k for k, _ in axes), combo))
        canonical = json.loads(json.dumps(cfg.canonical))  # deep copy
        for key in ("alpha", "tau", "eta"):
            if key in overrides:
                canonical["schedule"][key] = overrides[key]
        seeds = [overrides["seed"]] if "seed" in overrides else list(base_seeds)
        canonical["seeds"] = seeds
        from .config import parse_config

        parse_config(canonical)  # re-validate the overridden config
        points.append((overrides, canonical, seeds))

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    payloads = [(canonical, seeds) for _, canonical, seeds in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]

    sweep_path = os.path.join(out_dir, "sweep.csv")
    prov = _provenance(cfg.digest(), base_seeds[0])
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            f"# provenance config_digest={prov['config_digest']} "
            f"seed={prov['seed']} version={prov['version']}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(
            [
                "alpha", "tau", "eta", "seeds", "n_seeds",
                "final_train_risk_mean", "final_train_risk_std",
                "final_test_risk_mean", "final_test_risk_std",
                "accuracy_mean", "accuracy_std",
                "comm_per_client_per_direction", "steps",
            ]
        )
        for (overrides, canonical, seeds), (trains, tests, accs, comm, steps) in zip(
            points, results
        ):
            sched = canonical["schedule"]
            tr_m, tr_s = _mean_std(trains)
            te_m, te_s = _mean_std(tests)
            ac_m, ac_s = _mean_std(accs)
            writer.writerow(
                [
                    sched["alpha"], sched["tau"], repr(sched["eta"]),
                    ";".join(str(s) for s in seeds), len(seeds),
                    _cell(tr_m), _cell(tr_s), _cell(te_m), _cell(te_s),
                    _cell(ac_m), _cell(ac_s), comm, steps,
                ]
            )
    print(f"wrote {sweep_path}")
    return 0


def _cell(v) -> str:
    return "" if v is None else repr(v)


def cmd_verify_bound(args) -> int:
    canonical = load_bound_config(args.config)
    if args.seed is not None:
        canonical["seed"] = args.seed
    trial_cfg = build_bound_trial_config(canonical)
    report = verify_theorem1(trial_cfg)

    identity_reports = None
    all_passed = report.passed
    if args.identities:
        ident = canonical["identities"] or {
            "num_sampled": [canonical["clients"]],
            "draws": 100000,
        }
        identity_reports = []
        for khat in ident["num_sampled"]:
            for scheme in ("with_replacement", "without_replacement"):
                if scheme == "without_replacement" and khat > canonical["clients"]:
                    continue
                rep = verify_participation_identities(
                    canonical["clients"], khat, scheme, ident["draws"], canonical["seed"]
                )
                identity_reports.append(rep.to_json_dict())
                all_passed = all_passed and rep.passed

    out_dir = args.out if args.out is not None else "fedsim_out"
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "provenance": _provenance(bound_config_digest(canonical), canonical["seed"]),
        "report": report.to_json_dict(),
        "identity_reports": identity_reports,
    }
    path = os.path.join(out_dir, "bound_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    print(
        f"bound check: lhs={report.lhs:.6g} rhs={report.rhs:.6g} "
        f"slack={report.slack:.6g} ({'PASS' if report.passed else 'FAIL'})"
    )
    if identity_reports is not None:
        for rep in identity_reports:
            print(
                f"identities {rep['scheme']} num_sampled={rep['num_sampled']}: "
                f"{'PASS' if rep['passed'] else 'FAIL'}"
            )
    print(f"wrote {path}")
    return 0 if all_passed else 1


def cmd_consensus_trace(args) -> int:
    cfg = load_config(args.config)
    layout = build_layout(cfg.model_spec(), cfg.representation_layers)
    if len(layout.blocks) < 2:
        raise ConfigError("consensus-trace needs a model with at least 2 blocks.")
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out_dir = args.out if args.out is not None else cfg.output
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(cfg.digest(), seed)

    cadence = args.cadence if args.cadence is not None else 1
    if cadence < 1:
        raise ConfigError("consensus-trace needs a cadence >= 1.")
    rows = []

    def sink(r, s, rec):
        rows.append((r, s, rec.consensus))

    cfg.canonical["metrics"]["risks_at_sync"] = False
    model, shards, pop_source, result = _execute(cfg, seed, cadence=cadence, on_record=sink)

    trace_path = os.path.join(out_dir, "consensus.csv")
    block_names = [b.name for b in result.layout.blocks]
    sums = {name: 0.0 for name in block_names}
    with open(trace_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            f"# provenance config_digest={prov['config_digest']} "
            f"seed={prov['seed']} version={prov['version']}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["round", "step", "block", "consensus"])
        for r, s, cons in rows:
            for name in block_names:
                writer.writerow([r, s, name, repr(cons[name])])
                sums[name] += cons[name]
    n_rows = max(len(rows), 1)
    summary = {
        "provenance": prov,
        "steps_recorded": len(rows),
        "time_averaged_consensus": {name: sums[name] / n_rows for name in block_names},
    }
    summary_path = os.path.join(out_dir, "consensus_summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"wrote {trace_path} and {summary_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated-learning simulator and verification lab.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment; JSONL metrics + JSON summary")
    run_p.add_argument("config", help="experiment config (JSON)")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--out", help="output directory (default: config output)")
    run_p.add_argument("--cadence", type=int, help="consensus recording cadence in steps")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="grid sweep over alpha/tau/eta/seed; CSV")
    sweep_p.add_argument("config", help="experiment config (JSON)")
    sweep_p.add_argument("--grid", required=True, help='e.g. "alpha=1,5,10;eta=0.05,0.1"')
    sweep_p.add_argument("--seed", type=int, help="override the config seed list")
    sweep_p.add_argument("--out", help="output directory (default: config output)")
    sweep_p.set_defaults(func=cmd_sweep)

    vb_p = sub.add_parser("verify-bound", help="Monte Carlo bound verification; JSON report")
    vb_p.add_argument("config", help="bound config (JSON)")
    vb_p.add_argument("--seed", type=int, help="override the config seed")
    vb_p.add_argument("--out", help="output directory (default: fedsim_out)")
    vb_p.add_argument(
        "--identities",
        action="store_true",
        help="also check the participation reweighting identities",
    )
    vb_p.set_defaults(func=cmd_verify_bound)

    ct_p = sub.add_parser(
        "consensus-trace", help="per-step per-block consensus distances; CSV + summary"
    )
    ct_p.add_argument("config", help="experiment config (JSON)")
    ct_p.add_argument("--seed", type=int, help="override the config seed")
    ct_p.add_argument("--out", help="output directory (default: config output)")
    ct_p.add_argument("--cadence", type=int, help="recording cadence in steps (default 1)")
    ct_p.set_defaults(func=cmd_consensus_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
