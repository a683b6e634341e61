"""Command line entry point: ``fracfed run|sweep|check|partition-stats``.

Exit codes: 0 success, 1 run failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fracfed import checks
from fracfed.config import ExperimentConfig, parse_config
from fracfed.errors import ConfigError
from fracfed.experiment import load_dataset, prepare, run_cell, summarize
from fracfed.partition import heterogeneity_report, partition, train_test_split
from fracfed.records import SweepRow, emit_rounds, emit_sweep, mean_std

log = logging.getLogger("fracfed")

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get("FRACFED_OUT"):
        out = Path(os.environ["FRACFED_OUT"])
    else:
        out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(args, seeds):
    return [args.seed_override] if args.seed_override is not None else list(seeds)


def _write_meta(out: Path, command: str, cfg: ExperimentConfig, timings: dict) -> None:
    meta = {
        "command": command,
        "config": str(cfg.source) if cfg.source else None,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_millis": timings,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_run(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    target = cfg.algorithm.target_accuracy
    records, runs, timings = [], [], {}
    failed = None
    for seed in _seeds(args, cfg.seeds):
        try:
            prep = prepare(cfg, seed)
        except Exception as exc:
            failed = f"seed {seed}: data preparation failed: {exc}"
            break
        for name in cfg.algorithm.names:
            try:
                recs = run_cell(cfg, name, seed, parallel=args.parallel, prepared=prep)
            except Exception as exc:
                failed = f"{name} seed {seed}: {exc}"
                break
            records.extend(recs)
            timings[f"{name}/seed{seed}"] = [r.wall_millis for r in recs]
            summary = summarize(recs, target)
            summary.update(algorithm=name, seed=seed, alpha=cfg.fed_config(name).alpha)
            runs.append(summary)
            log.info("%s seed=%d final_acc=%s rounds_to_target=%s", name, seed,
                     summary["final_accuracy"], summary["rounds_to_target"])
        if failed:
            break

    if "csv" in cfg.formats:
        (out / "rounds.csv").write_text(emit_rounds(records))
    if "json" in cfg.formats:
        doc = {"target_accuracy": target, "runs": runs, "partial": failed is not None}
        (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    _write_meta(out, "run", cfg, timings)
    if failed:
        (out / "PARTIAL").write_text(failed + "\n")
        print(f"run failed: {failed}", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    if not cfg.sweep_alphas:
        print("config error: sweep needs a [sweep] section with alphas", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, cfg)
    seeds = _seeds(args, cfg.sweep_seeds or cfg.seeds)
    cells = [(a, s) for a in cfg.sweep_alphas for s in seeds]

    def work(cell):
        alpha, seed = cell
        return run_cell(cfg, "fofedavg", seed, alpha=alpha)

    try:
        if args.parallel > 1:
            with ThreadPoolExecutor(max_workers=args.parallel) as pool:
                results = list(pool.map(work, cells))
        else:
            results = [work(c) for c in cells]
    except Exception as exc:
        (out / "PARTIAL").write_text(f"sweep failed: {exc}\n")
        print(f"sweep failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED

    target = cfg.algorithm.target_accuracy
    rows, all_records = [], []
    for alpha in cfg.sweep_alphas:
        mine = [recs for (a, _), recs in zip(cells, results) if a == alpha]
        finals = [r[-1].test_accuracy for r in mine if r and r[-1].test_accuracy is not None]
        mean, std = mean_std(finals)
        reached = [summarize(r, target)["rounds_to_target"] for r in mine] if target is not None else []
        reached = [x for x in reached if x is not None]
        rows.append(SweepRow(alpha, len(mine), mean, std, mean_std(reached)[0], len(reached)))
    for recs in results:
        all_records.extend(recs)
    (out / "sweep.csv").write_text(emit_sweep(rows))
    (out / "sweep_rounds.csv").write_text(emit_rounds(all_records))
    _write_meta(out, "sweep", cfg, {f"alpha{a}/seed{s}": [r.wall_millis for r in recs]
                                    for (a, s), recs in zip(cells, results)})
    return EXIT_OK


def cmd_check(args=None, cfg=None) -> int:
    ok = checks.run_all()
    print("invariant suite:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUN_FAILED


def cmd_partition_stats(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    seed = _seeds(args, cfg.seeds)[0]
    ds = load_dataset(cfg, seed)
    split_seed = cfg.dataset.seed if cfg.dataset.seed is not None else seed
    train, _ = train_test_split(ds, cfg.dataset.test_fraction, split_seed)
    shards = partition(train, cfg.partition, seed)
    rep = heterogeneity_report(shards, train)
    lines = ["# fracfed-partition v1",
             ",".join(["client_id", "n_k", "classes", "mean_tv"] + [f"c{j}" for j in range(train.num_classes)])]
    K = len(shards)
    for k, s in enumerate(shards):
        mine = [v for (i, j), v in rep.tv_distances.items() if k in (i, j)]
        mean_tv = repr(sum(mine) / len(mine)) if mine else ""
        counts = [str(int(c)) for c in rep.histograms[k]]
        lines.append(",".join([str(s.client_id), str(s.n_k), str(int(rep.classes_per_client[k])), mean_tv] + counts))
    (out / "partition_stats.csv").write_text("\n".join(lines) + "\n")
    tv = rep.mean_tv
    print(f"clients={K} max_classes_per_client={int(rep.classes_per_client.max())} "
          f"mean_pairwise_tv={'n/a' if tv is None else f'{tv:.4f}'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "partition-stats": cmd_partition_stats}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracfed", description="Fractional-order federated averaging simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "check")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides FRACFED_OUT)")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--parallel", type=int, default=1, help="worker threads")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.parallel < 1:
        print("--parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check":
        return cmd_check(args)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
