"""Versioned CSV emitters/parsers for round and sweep records.

Floats are written with ``repr`` so that reading a file back reproduces
the exact values. ``None`` is an empty cell. Wall-clock timings are kept
out of these files so reruns produce byte-identical bodies.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

from fracfed.federation import RoundRecord

ROUNDS_HEADER = "# fracfed-rounds v1"
SWEEP_HEADER = "# fracfed-sweep v1"
ROUND_COLUMNS = (
    "round", "algorithm", "seed", "alpha", "train_loss", "test_accuracy",
    "global_grad_norm", "bytes_cumulative", "clipped_steps", "crossed_target",
)
SWEEP_COLUMNS = (
    "alpha", "runs", "final_accuracy_mean", "final_accuracy_std", "rounds_to_target_mean", "reached_target",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _opt_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def _write(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _read(text: str, header: str):
    lines = text.splitlines()
    if not lines or lines[0] != header:
        raise ValueError(f"missing '{header}' header line")
    reader = csv.DictReader(lines[1:])
    return list(reader)


def emit_rounds(records: list[RoundRecord]) -> str:
    return _write(ROUNDS_HEADER, ROUND_COLUMNS, ([getattr(r, c) for c in ROUND_COLUMNS] for r in records))


def parse_rounds(text: str) -> list[RoundRecord]:
    out = []
    for row in _read(text, ROUNDS_HEADER):
        out.append(
            RoundRecord(
                round=int(row["round"]),
                algorithm=row["algorithm"],
                seed=int(row["seed"]),
                alpha=_opt_float(row["alpha"]),
                train_loss=float(row["train_loss"]),
                test_accuracy=_opt_float(row["test_accuracy"]),
                global_grad_norm=float(row["global_grad_norm"]),
                bytes_cumulative=int(row["bytes_cumulative"]),
                clipped_steps=int(row["clipped_steps"]),
                crossed_target=row["crossed_target"] == "1",
            )
        )
    return out


@dataclass
class SweepRow:
    alpha: float
    runs: int
    final_accuracy_mean: Optional[float]
    final_accuracy_std: Optional[float]
    rounds_to_target_mean: Optional[float]
    reached_target: int


def emit_sweep(rows: list[SweepRow]) -> str:
    return _write(SWEEP_HEADER, SWEEP_COLUMNS, ([getattr(r, c) for c in SWEEP_COLUMNS] for r in rows))


def parse_sweep(text: str) -> list[SweepRow]:
    return [
        SweepRow(
            alpha=float(row["alpha"]),
            runs=int(row["runs"]),
            final_accuracy_mean=_opt_float(row["final_accuracy_mean"]),
            final_accuracy_std=_opt_float(row["final_accuracy_std"]),
            rounds_to_target_mean=_opt_float(row["rounds_to_target_mean"]),
            reached_target=int(row["reached_target"]),
        )
        for row in _read(text, SWEEP_HEADER)
    ]


def mean_std(values) -> tuple[Optional[float], Optional[float]]:
    """Population mean and standard deviation; ``(None, None)`` for no values."""
    values = [float(v) for v in values]
    if not values:
        return None, None
    if min(values) == max(values):
        return values[0], 0.0
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)
