"""FedAvg / FOFedAvg / FedProx round engine with byte metering."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from fracfed.errors import NumericError, UsageError
from fracfed.numerics import FracConfig, RngStream, bootstrap_step, derive_stream, effective_step, lr_schedule
from fracfed.objectives import Objective, as_params
from fracfed.optimizers import EpochBatcher
from fracfed.partition import ClientShard, Dataset

ALGORITHMS = ("fofedavg", "fedavg", "fedprox")
COMM_MODES = ("client-caches-prev", "broadcast-prev")
WIRE_BYTES = 4  # float32 on the wire


@dataclass(frozen=True)
class FedConfig:
    algorithm: str
    K: int
    C: float = 0.2
    E: int = 1
    B: int = 32
    frac: Optional[FracConfig] = None
    eta: Optional[float] = None
    eta_schedule: str = "constant"
    prox_mu: float = 0.0
    rounds: int = 10
    target_accuracy: Optional[float] = None
    comm_mode: str = "client-caches-prev"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.K < 1:
            raise UsageError("K must be >= 1")
        if not 0.0 < self.C <= 1.0:
            raise UsageError(f"C must lie in (0, 1], got {self.C}")
        if self.E < 1 or self.B < 1 or self.rounds < 0:
            raise UsageError("E and B must be >= 1 and rounds >= 0")
        if self.algorithm == "fofedavg" and self.frac is None:
            raise UsageError("fofedavg needs a FracConfig")
        if self.algorithm in ("fedavg", "fedprox") and not (self.eta and self.eta > 0):
            raise UsageError(f"{self.algorithm} needs a positive eta")
        if self.eta_schedule not in ("constant", "decay"):
            raise UsageError(f"eta_schedule must be 'constant' or 'decay', got {self.eta_schedule!r}")
        if self.prox_mu < 0:
            raise UsageError("prox_mu must be >= 0")
        if self.comm_mode not in COMM_MODES:
            raise UsageError(f"comm_mode must be one of {COMM_MODES}")

    @property
    def m(self) -> int:
        return max(math.floor(self.C * self.K), 1)

    @property
    def alpha(self) -> Optional[float]:
        return self.frac.alpha if self.algorithm == "fofedavg" else None


@dataclass(frozen=True)
class ServerState:
    theta_global: np.ndarray
    theta_global_prev: Optional[np.ndarray] = None
    round: int = 0

    def __post_init__(self):
        if (self.theta_global_prev is None) != (self.round == 0):
            raise UsageError("theta_global_prev must be present exactly when round >= 1")


@dataclass(frozen=True)
class ClientUpdateResult:
    client_id: int
    theta_local: np.ndarray
    n_k: int
    local_steps_taken: int
    bytes_up: int
    clipped_steps: int = 0


@dataclass
class RoundRecord:
    round: int
    algorithm: str
    seed: int
    alpha: Optional[float]
    train_loss: float
    test_accuracy: Optional[float]
    global_grad_norm: float
    bytes_cumulative: int
    clipped_steps: int
    crossed_target: bool = False
    wall_millis: Optional[float] = None


def sample_clients(K: int, C: float, round: int, stream: RngStream) -> list[int]:
    """``max(floor(C*K), 1)`` distinct client ids, sorted."""
    if K < 1 or not 0.0 < C <= 1.0:
        raise UsageError(f"need K >= 1 and C in (0, 1], got K={K}, C={C}")
    m = max(math.floor(C * K), 1)
    rng = derive_stream(stream.root_seed, stream.label, round).generator()
    return sorted(int(k) for k in rng.choice(K, size=m, replace=False))


def comm_meter(m: int, d: int, algorithm: str, round: int, mode: str = "client-caches-prev") -> int:
    """Bytes moved in one round: model down to and back from ``m`` clients.

    In ``broadcast-prev`` mode FOFedAvg rounds t >= 1 also ship the previous
    global model downstream.
    """
    if mode not in COMM_MODES:
        raise UsageError(f"unknown comm mode {mode!r}")
    payload = m * d * WIRE_BYTES
    down = payload
    if algorithm == "fofedavg" and round >= 1 and mode == "broadcast-prev":
        down = 2 * payload
    return down + payload


def client_update(
    client: ClientShard,
    server: ServerState,
    cfg: FedConfig,
    obj: Objective,
    stream: RngStream,
) -> ClientUpdateResult:
    """Local training for one round (E epochs over ceil(n_k / B) mini-batches)."""
    t = server.round
    theta = server.theta_global.copy()
    anchor = server.theta_global_prev
    batcher = EpochBatcher(client.indices, cfg.B, stream)
    fractional = cfg.algorithm == "fofedavg" and t >= 1
    steps = clipped = 0
    for e in range(cfg.E):
        for j, batch in enumerate(batcher.epoch(e)):
            try:
                grad = obj.evaluate(theta, batch).grad
                if cfg.algorithm == "fofedavg":
                    if fractional:
                        step = effective_step(cfg.frac, t, float(np.linalg.norm(theta - anchor)))
                    else:
                        step = bootstrap_step(cfg.frac)
                    rate = step.value
                    clipped += step.clipped
                elif cfg.algorithm == "fedavg":
                    rate = lr_schedule(cfg.eta, t) if cfg.eta_schedule == "decay" else cfg.eta
                else:
                    grad = grad + cfg.prox_mu * (theta - server.theta_global)
                    rate = cfg.eta
                theta = theta - rate * grad
                bad = np.flatnonzero(~np.isfinite(theta))
                if bad.size:
                    raise NumericError("non-finite local parameters", coordinate=int(bad[0]))
            except NumericError as exc:
                raise NumericError(
                    "client update failed: " + str(exc),
                    coordinate=exc.coordinate,
                    context={"client_id": client.client_id, "round": t, "epoch": e, "batch": j},
                ) from exc
            steps += 1
    return ClientUpdateResult(client.client_id, theta, client.n_k, steps, theta.size * WIRE_BYTES, clipped)


def aggregate(results: list[ClientUpdateResult]) -> np.ndarray:
    """Sample-size weighted mean, summed in client_id order."""
    if not results:
        raise UsageError("cannot aggregate an empty list of client results")
    ordered = sorted(results, key=lambda r: r.client_id)
    dim = ordered[0].theta_local.shape
    if any(r.theta_local.shape != dim for r in ordered):
        raise UsageError("client results have differing dimensions")
    total = sum(r.n_k for r in ordered)
    acc = np.zeros(dim)
    for r in ordered:
        acc += (r.n_k / total) * r.theta_local
    return acc


def run_federation(
    obj: Objective,
    shards: list[ClientShard],
    cfg: FedConfig,
    seed: int,
    test: Optional[Dataset] = None,
    theta0=None,
    parallel: int = 1,
    on_round: Optional[Callable[[RoundRecord, ServerState], None]] = None,
) -> list[RoundRecord]:
    """Run ``cfg.rounds`` communication rounds and return one record per round.

    ``on_round`` receives each record with the post-aggregation server state.
    Client updates may run on ``parallel`` threads; every random draw comes
    from a labeled stream and aggregation order is fixed, so the result does
    not depend on the thread count.
    """
    if len(shards) != cfg.K:
        raise UsageError(f"config K={cfg.K} but {len(shards)} shards supplied")
    if theta0 is None:
        theta0 = obj.init_params(derive_stream(seed, "init"))
    server = ServerState(as_params(theta0, obj.dim))
    sample_stream = derive_stream(seed, "sample")
    by_id = {s.client_id: s for s in shards}
    records: list[RoundRecord] = []
    bytes_total = 0
    crossed = False
    pool = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    try:
        for t in range(cfg.rounds):
            started = time.perf_counter()
            chosen = sample_clients(cfg.K, cfg.C, t, sample_stream)

            def work(k, server=server, t=t):
                return client_update(by_id[k], server, cfg, obj, derive_stream(seed, f"client{k}/batches", t))

            results = list(pool.map(work, chosen)) if pool else [work(k) for k in chosen]
            new_theta = aggregate(results)
            server = ServerState(new_theta, server.theta_global, t + 1)
            bytes_total += comm_meter(len(chosen), obj.dim, cfg.algorithm, t, cfg.comm_mode)

            full = obj.evaluate(new_theta)
            acc = obj.accuracy(new_theta, test) if test is not None and hasattr(obj, "accuracy") else None
            hit = False
            if cfg.target_accuracy is not None and acc is not None and not crossed and acc >= cfg.target_accuracy:
                crossed = hit = True
            rec = RoundRecord(
                round=t,
                algorithm=cfg.algorithm,
                seed=seed,
                alpha=cfg.alpha,
                train_loss=full.loss,
                test_accuracy=acc,
                global_grad_norm=float(np.linalg.norm(full.grad)),
                bytes_cumulative=bytes_total,
                clipped_steps=sum(r.clipped_steps for r in results),
                crossed_target=hit,
                wall_millis=1000.0 * (time.perf_counter() - started),
            )
            records.append(rec)
            if on_round is not None:
                on_round(rec, server)
    finally:
        if pool:
            pool.shutdown()
    return records


def rounds_to_target(records: list[RoundRecord], target: float) -> Optional[int]:
    """Number of rounds run when test accuracy first reached ``target`` (None if never)."""
    for rec in records:
        if rec.test_accuracy is not None and rec.test_accuracy >= target:
            return rec.round + 1
    return None


def mb_to_target(records: list[RoundRecord], target: float) -> Optional[float]:
    n = rounds_to_target(records, target)
    return None if n is None else records[n - 1].bytes_cumulative / 1e6
