"""Post-hoc diagnostics: sufficient-decrease audits, bias probes, memory weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fracfed.errors import UsageError
from fracfed.numerics import FracConfig
from fracfed.objectives import Objective
from fracfed.optimizers import Trajectory
from fracfed.partition import ClientShard

SLACK_TOL = 1e-9
# Relative tolerance when comparing a step against 2/L or against its
# closed-form value; L itself comes from power iteration.
REL_TOL = 1e-12


def kappa(alpha_t: float, L: float) -> float:
    """Decrease coefficient ``alpha_t * (1 - L * alpha_t / 2)``."""
    return alpha_t * (1.0 - 0.5 * L * alpha_t)


@dataclass(frozen=True)
class DecreaseAudit:
    t: int
    f_before: float
    f_after: float
    grad_norm_sq: float
    alpha_t: float
    kappa_t: float
    slack: float
    cap_violation: bool = False
    decrease_violation: bool = False
    step_mismatch: bool = False

    @property
    def ok(self) -> bool:
        return not (self.cap_violation or self.decrease_violation or self.step_mismatch)


def expected_step(config: FracConfig, i: int, step_norm: float, schedule_offset: int = 0) -> float:
    """Closed-form step for transition ``i`` of a FOSGD run.

    Deliberately written against ``math.gamma`` rather than the package's own
    Gamma and step helpers, so an audit cross-checks the optimizer instead of
    repeating it.
    """
    if i == 0:
        value = config.mu0
    else:
        mu = config.mu0 / math.sqrt(i - 1 + schedule_offset + 1)
        value = mu * (step_norm + config.delta) ** (1.0 - config.alpha) / math.gamma(2.0 - config.alpha)
    if config.cap is not None:
        value = min(value, config.cap)
    return value


def audit_decrease(
    traj: Trajectory,
    obj: Objective,
    config: Optional[FracConfig] = None,
    schedule_offset: int = 0,
    slack_tol: float = SLACK_TOL,
) -> list[DecreaseAudit]:
    """Check ``f(next) <= f(curr) - kappa_t * |grad f(curr)|^2`` on every transition.

    The trajectory must come from full-batch gradients. When ``config`` is
    given, each recorded step is also compared with its closed-form value.
    """
    L = obj.smoothness()
    if L is None:
        raise UsageError(f"audit needs an analytic smoothness constant; {obj.kind!r} has none")
    out = []
    for i, alpha_t in enumerate(traj.steps):
        g2 = traj.grad_norms[i] ** 2
        k = kappa(alpha_t, L)
        slack = traj.losses[i + 1] - traj.losses[i] + k * g2
        mismatch = False
        if config is not None:
            norm = 0.0 if i == 0 else float(np.linalg.norm(traj.thetas[i] - traj.thetas[i - 1]))
            want = expected_step(config, i, norm, schedule_offset)
            mismatch = abs(want - alpha_t) > REL_TOL * max(abs(want), 1.0)
            if not mismatch and traj.grad_norms[i] > 0.0:
                moved = float(np.linalg.norm(traj.thetas[i + 1] - traj.thetas[i]))
                mismatch = abs(moved - want * traj.grad_norms[i]) > 1e-9 * max(moved, 1.0)
        out.append(
            DecreaseAudit(
                t=i,
                f_before=traj.losses[i],
                f_after=traj.losses[i + 1],
                grad_norm_sq=g2,
                alpha_t=alpha_t,
                kappa_t=k,
                slack=slack,
                cap_violation=alpha_t > (2.0 / L) * (1.0 + REL_TOL),
                decrease_violation=slack > slack_tol,
                step_mismatch=mismatch,
            )
        )
    return out


@dataclass(frozen=True)
class BiasProbe:
    client_id: int
    grad_local: np.ndarray
    grad_global: np.ndarray
    alpha_t: float
    term_structural: np.ndarray
    term_scaling: np.ndarray

    @property
    def bias(self) -> np.ndarray:
        return self.alpha_t * self.grad_local - self.grad_global


def bias_probe(shards: list[ClientShard], obj: Objective, theta, alpha_t: float) -> list[BiasProbe]:
    """Split each client's expected update bias into non-IID and step-scale parts.

    ``grad_global`` is the sample-weighted mean of the client full-batch
    gradients, i.e. the gradient of the federated objective.
    """
    local = [obj.evaluate(theta, s.indices).grad for s in shards]
    n = sum(s.n_k for s in shards)
    g = np.zeros_like(local[0])
    for s, gk in zip(shards, local):
        g += s.n_k * gk
    g /= n
    return [
        BiasProbe(s.client_id, gk, g, alpha_t, alpha_t * (gk - g), (alpha_t - 1.0) * g)
        for s, gk in zip(shards, local)
    ]


def memory_weights(alpha: float, horizon: int) -> np.ndarray:
    """Normalized power-law weights ``(j + 1) ** -(1 + alpha)`` for ``j = 0..horizon``."""
    if not 0.0 < alpha <= 1.0:
        raise UsageError(f"alpha must lie in (0, 1], got {alpha}")
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    w = np.arange(1, horizon + 2, dtype=np.float64) ** -(1.0 + alpha)
    return w / w.sum()


THRESHOLDS = (1e-1, 1e-2, 1e-3)


@dataclass(frozen=True)
class StationarityReport:
    running_min: np.ndarray
    first_below: dict  # threshold -> first index or None

    def reached(self, threshold: float) -> bool:
        return self.first_below.get(threshold) is not None


def stationarity_report(grad_norms, thresholds=THRESHOLDS) -> StationarityReport:
    norms = np.asarray(grad_norms, dtype=np.float64)
    running = np.minimum.accumulate(norms)
    first = {}
    for thr in thresholds:
        hits = np.flatnonzero(norms < thr)
        first[thr] = int(hits[0]) if hits.size else None
    return StationarityReport(running, first)
