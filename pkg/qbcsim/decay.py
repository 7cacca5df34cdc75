"""
Decay Model
===========
Exponential decay of free neutrons: survival probability, decay-time
sampling and the expected surviving count alpha * N * exp(-T / tau).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParams


NEUTRON_LIFETIME = 885.7  # seconds


@dataclass(frozen=True)
class DecayParams:
    tau: float = NEUTRON_LIFETIME

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidParams(f"tau must be positive, got {self.tau}")


def survival_probability(t: float, params: DecayParams) -> float:
    """P(no decay by time t) = exp(-t / tau)."""
    if t < 0:
        raise InvalidParams(f"t must be >= 0, got {t}")
    return float(np.exp(-t / params.tau))


def sample_decay_time(rng: np.random.Generator, params: DecayParams, size: Optional[int] = None):
    """Exponential decay time(s) with mean tau, measured from generation."""
    draws = rng.exponential(params.tau, size)
    return float(draws) if size is None else draws


def surviving_count(N: int, alpha: float, T: float, params: DecayParams) -> float:
    """
    Expected number of transmitted neutrons still alive at time T.

    For T >= tau the result is bounded by alpha * N / e.
    """
    if N < 0:
        raise InvalidParams(f"N must be >= 0, got {N}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParams(f"alpha must lie in [0, 1], got {alpha}")
    if T < 0:
        raise InvalidParams(f"T must be >= 0, got {T}")
    return alpha * N * survival_probability(T, params)
