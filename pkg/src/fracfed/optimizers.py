"""Centralized SGD and fractional-order SGD steppers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fracfed.errors import NumericError, UsageError
from fracfed.numerics import FracConfig, RngStream, bootstrap_step, effective_step, lr_schedule
from fracfed.objectives import Objective, as_params


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _check_finite(theta: np.ndarray, **context) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(theta))
    if bad.size:
        raise NumericError("non-finite parameters after update", coordinate=int(bad[0]), context=context)
    return theta


def sgd_step(theta, grad, lr: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _check_dims(theta, grad)
    return theta - lr * grad


@dataclass(frozen=True)
class FosgdState:
    """Current iterate plus the previous one (the memory anchor).

    Only two parameter vectors are ever held, whatever the step count.
    ``last_step`` / ``last_clipped`` describe the step that produced
    ``theta_curr``.
    """

    theta_curr: np.ndarray
    theta_prev: np.ndarray
    step_count: int
    last_step: float = 0.0
    last_clipped: bool = False

    @property
    def memory_norm(self) -> float:
        return float(np.linalg.norm(self.theta_curr - self.theta_prev))


def fosgd_bootstrap(theta0, grad0, config: FracConfig) -> FosgdState:
    """First iterate by plain SGD with rate ``mu0`` (clipped to the cap, if any)."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    step = bootstrap_step(config)
    curr = _check_finite(sgd_step(theta0, grad0, step.value), step=0)
    return FosgdState(curr, theta0.copy(), 1, step.value, step.clipped)


def fosgd_step(state: FosgdState, grad, config: FracConfig, mu_index: int) -> FosgdState:
    grad = np.asarray(grad, dtype=np.float64)
    if state.step_count < 1:
        raise UsageError("fosgd_step called before bootstrap")
    _check_dims(state.theta_curr, grad)
    step = effective_step(config, mu_index, state.memory_norm)
    new = _check_finite(state.theta_curr - step.value * grad, step=state.step_count)
    return FosgdState(new, state.theta_curr, state.step_count + 1, step.value, step.clipped)


# ----------------------------------------------------------------------- batching


def full_batch(step: int):
    return None


@dataclass
class EpochBatcher:
    """Mini-batches without replacement, reshuffled every epoch.

    Calling the batcher with a global step number returns that step's index
    batch (sorted). The permutation of epoch ``e`` comes from
    ``stream.child(f"epoch{e}")`` so any step can be reproduced in isolation.
    """

    indices: np.ndarray
    batch_size: int
    stream: RngStream
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size == 0 or self.batch_size < 1:
            raise UsageError("EpochBatcher needs data and batch_size >= 1")

    @property
    def batches_per_epoch(self) -> int:
        return -(-self.indices.size // self.batch_size)

    def epoch(self, e: int) -> list[np.ndarray]:
        if e not in self._cache:
            perm = self.stream.child(f"epoch{e}").generator().permutation(self.indices)
            B = self.batch_size
            # Only the current epoch is kept.
            self._cache = {e: [np.sort(perm[i:i + B]) for i in range(0, perm.size, B)]}
        return self._cache[e]

    def __call__(self, step: int) -> np.ndarray:
        e, j = divmod(step, self.batches_per_epoch)
        return self.epoch(e)[j]


# ---------------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    """Iterates with their loss and gradient norm.

    ``thetas``, ``losses`` and ``grad_norms`` have ``t_max + 1`` entries
    (including the start point); ``steps`` and ``clipped`` hold the step
    size used for each of the ``t_max`` transitions.
    """

    thetas: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    clipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.thetas)

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]


def run_fosgd(
    obj: Objective,
    theta0,
    config: FracConfig,
    t_max: int,
    batcher: Callable[[int], Optional[np.ndarray]] = full_batch,
    schedule_offset: int = 0,
) -> Trajectory:
    """Bootstrap SGD step followed by ``t_max - 1`` fractional steps.

    The fractional step that produces iterate ``i + 2`` uses schedule index
    ``i + schedule_offset``. With the default offset 0 this is the
    centralized listing (first fractional step at ``mu0``); offset 1 matches
    the federated round indexing, where the first fractional update happens
    in round 1 at ``mu0 / sqrt(2)``.
    """
    if t_max < 2:
        raise UsageError(f"t_max must be >= 2, got {t_max}")
    theta0 = as_params(theta0, obj.dim)
    traj = Trajectory()
    res = obj.evaluate(theta0, batcher(0))
    traj.thetas.append(theta0)
    traj.losses.append(res.loss)
    traj.grad_norms.append(float(np.linalg.norm(res.grad)))
    state = fosgd_bootstrap(theta0, res.grad, config)
    traj.steps.append(state.last_step)
    traj.clipped.append(state.last_clipped)
    for i in range(t_max - 1):
        res = obj.evaluate(state.theta_curr, batcher(i + 1))
        traj.thetas.append(state.theta_curr)
        traj.losses.append(res.loss)
        traj.grad_norms.append(float(np.linalg.norm(res.grad)))
        state = fosgd_step(state, res.grad, config, i + schedule_offset)
        traj.steps.append(state.last_step)
        traj.clipped.append(state.last_clipped)
    res = obj.evaluate(state.theta_curr, batcher(t_max))
    traj.thetas.append(state.theta_curr)
    traj.losses.append(res.loss)
    traj.grad_norms.append(float(np.linalg.norm(res.grad)))
    return traj


def run_sgd(
    obj: Objective,
    theta0,
    t_max: int,
    lr: Callable[[int], float],
    batcher: Callable[[int], Optional[np.ndarray]] = full_batch,
) -> Trajectory:
    """Plain SGD where step ``i`` uses rate ``lr(i)``."""
    theta = as_params(theta0, obj.dim)
    traj = Trajectory()
    for i in range(t_max + 1):
        res = obj.evaluate(theta, batcher(i))
        traj.thetas.append(theta)
        traj.losses.append(res.loss)
        traj.grad_norms.append(float(np.linalg.norm(res.grad)))
        if i == t_max:
            break
        rate = lr(i)
        theta = _check_finite(sgd_step(theta, res.grad, rate), step=i)
        traj.steps.append(rate)
        traj.clipped.append(False)
    return traj


def decaying_sgd_rates(mu0: float, schedule_offset: int = 0) -> Callable[[int], float]:
    """Rates matching FOSGD with alpha = 1: ``mu0`` first, then the decaying schedule."""

    def rate(i: int) -> float:
        return mu0 if i == 0 else lr_schedule(mu0, i - 1 + schedule_offset)

    return rate
