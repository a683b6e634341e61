"""Scalar special functions, step-size schedules and seeded RNG streams."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from fracfed.errors import UsageError

# Lanczos approximation with g = 7 and 9 coefficients (Numerical Recipes /
# Godfrey set). Relative error is below 1e-14 on (0.5, 3].
LANCZOS_G = 7
LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gamma(x: float) -> float:
    """Gamma function for positive real ``x`` via the Lanczos series.

    Values below 0.5 go through the reflection formula, so the series is
    only ever evaluated where it is accurate.
    """
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise UsageError(f"gamma is defined here only for finite x > 0, got {x!r}")
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    z = x - 1.0
    acc = LANCZOS_COEFFS[0]
    for i in range(1, len(LANCZOS_COEFFS)):
        acc += LANCZOS_COEFFS[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return _SQRT_2PI * t ** (z + 0.5) * math.exp(-t) * acc


def lr_schedule(mu0: float, t: int) -> float:
    """Decaying learning rate ``mu0 / sqrt(t + 1)``."""
    if t < 0:
        raise UsageError(f"schedule index must be >= 0, got {t}")
    return mu0 / math.sqrt(t + 1)


@dataclass(frozen=True)
class FracConfig:
    """Hyperparameters of the fractional-order step.

    ``alpha`` is the fractional order, ``mu0`` the initial learning rate,
    ``delta`` the additive regularizer inside the memory norm and ``cap`` an
    optional ceiling on the effective step size (set it to ``2 / L`` when the
    smoothness constant is known).
    """

    alpha: float
    mu0: float = 0.01
    delta: float = 1e-5
    cap: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise UsageError(
                f"alpha={self.alpha} outside (0, 1]; the convergence theory only covers "
                "fractional orders in (0, 1]"
            )
        if not self.mu0 > 0.0:
            raise UsageError(f"mu0 must be positive, got {self.mu0}")
        if not self.delta > 0.0:
            raise UsageError(f"delta must be positive, got {self.delta}")
        if self.cap is not None and not self.cap > 0.0:
            raise UsageError(f"cap must be positive when given, got {self.cap}")


class StepSize(NamedTuple):
    value: float
    clipped: bool


def frac_factor(config: FracConfig, step_norm: float) -> float:
    """Scalar ``(step_norm + delta)**(1 - alpha) / Gamma(2 - alpha)``.

    Returns exactly 1.0 for ``alpha == 1`` so that the fractional update
    collapses bit-for-bit onto decaying-step SGD.
    """
    if step_norm < 0.0:
        raise UsageError(f"step_norm must be >= 0, got {step_norm}")
    if config.alpha == 1.0:
        return 1.0
    return (step_norm + config.delta) ** (1.0 - config.alpha) / gamma(2.0 - config.alpha)


def effective_step(config: FracConfig, t: int, step_norm: float) -> StepSize:
    """Effective step size at schedule index ``t`` and memory norm ``step_norm``."""
    value = lr_schedule(config.mu0, t) * frac_factor(config, step_norm)
    if config.cap is not None and value > config.cap:
        return StepSize(config.cap, True)
    return StepSize(value, False)


def bootstrap_step(config: FracConfig) -> StepSize:
    """Rate of the plain SGD step that seeds the memory: ``mu0``, clipped to the cap."""
    if config.cap is not None and config.mu0 > config.cap:
        return StepSize(config.cap, True)
    return StepSize(config.mu0, False)


@dataclass(frozen=True)
class RngStream:
    """Immutable descriptor of one labeled random stream.

    Consumers call :meth:`generator` to get private state; the descriptor
    itself is never mutated, so streams can be handed to worker threads.
    """

    root_seed: int
    label: str
    round: int = 0

    @property
    def key(self) -> int:
        payload = f"{self.root_seed & 0xFFFFFFFFFFFFFFFF}\x1f{self.label}\x1f{self.round}"
        digest = hashlib.blake2b(payload.encode(), digest_size=16).digest()
        return int.from_bytes(digest, "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key))

    def bytes(self, n: int) -> bytes:
        return self.generator().bytes(n)

    def child(self, label: str) -> "RngStream":
        return RngStream(self.root_seed, f"{self.label}/{label}", self.round)


def derive_stream(root_seed: int, label: str, round: int = 0) -> RngStream:
    if round < 0:
        raise UsageError(f"round must be >= 0, got {round}")
    return RngStream(int(root_seed), str(label), int(round))
