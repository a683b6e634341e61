"""Glue between configs and the federation engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from fracfed.config import ExperimentConfig
from fracfed.federation import RoundRecord, mb_to_target, rounds_to_target, run_federation
from fracfed.objectives import Objective, build_objective
from fracfed.partition import (
    ClientShard,
    Dataset,
    load_idx,
    partition,
    read_dataset,
    synth_classification,
    train_test_split,
)


@dataclass
class Prepared:
    train: Dataset
    test: Dataset
    shards: list[ClientShard]
    obj: Objective


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    d = cfg.dataset
    if d.kind == "synth":
        data_seed = d.seed if d.seed is not None else seed
        return synth_classification(d.n, d.p, d.num_classes, d.class_sep, data_seed)
    if d.kind == "idx":
        return load_idx(d.images, d.labels, d.num_classes)
    return read_dataset(d.path)


def prepare(cfg: ExperimentConfig, seed: int) -> Prepared:
    """Load data, hold out the global test set, partition the rest."""
    ds = load_dataset(cfg, seed)
    split_seed = cfg.dataset.seed if cfg.dataset.seed is not None else seed
    train, test = train_test_split(ds, cfg.dataset.test_fraction, split_seed)
    shards = partition(train, cfg.partition, seed)
    obj = build_objective(cfg.model_kind, train, cfg.model_width)
    return Prepared(train, test, shards, obj)


def run_cell(
    cfg: ExperimentConfig,
    name: str,
    seed: int,
    alpha: Optional[float] = None,
    parallel: int = 1,
    prepared: Optional[Prepared] = None,
) -> list[RoundRecord]:
    prep = prepared or prepare(cfg, seed)
    fed = cfg.fed_config(name, alpha)
    return run_federation(prep.obj, prep.shards, fed, seed, test=prep.test, parallel=parallel)


def summarize(records: list[RoundRecord], target: Optional[float]) -> dict:
    last = records[-1] if records else None
    out = {
        "rounds": len(records),
        "final_accuracy": last.test_accuracy if last else None,
        "bytes_total": last.bytes_cumulative if last else 0,
        "rounds_to_target": None,
        "MB_to_target": None,
    }
    if target is not None:
        out["rounds_to_target"] = rounds_to_target(records, target)
        out["MB_to_target"] = mb_to_target(records, target)
    return out
