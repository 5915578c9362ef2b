"""Discrete diffusion noise schedule and derived per-step quantities.

Index convention (used everywhere in this package): the textbook formulas
index steps 1..T, arrays store step t at index t-1. So ``beta[i]`` is the
variance added going from level i to level i+1 (1-based t = i+1),
``alpha_bar[i]`` is the cumulative product over steps 1..i+1, and a state
"at level i" has marginal sqrt(alpha_bar[i]) * x0 + sqrt(1-alpha_bar[i]) * eps.
``sigma[0] = 0`` by convention: the final reverse step is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

__all__ = ["NoiseSchedule", "make_linear_schedule", "noise_to_level"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step schedule tables.

    All arrays have length ``num_steps`` and are read-only; samplers never
    recompute them. Safe to share across concurrent samplers.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for arr in (self.beta, self.alpha_bar, self.sigma):
            arr.setflags(write=False)

    @property
    def num_steps(self) -> int:
        return len(self.beta)

    def alpha_bar_prev(self, t: int) -> float:
        """Cumulative product one step earlier; 1.0 below the first step."""
        return float(self.alpha_bar[t - 1]) if t >= 1 else 1.0

    def content_hash(self) -> str:
        """Stable hex digest of the schedule tables, for checkpoint headers."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.beta, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def make_linear_schedule(num_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Build a schedule whose beta interpolates linearly over ``num_steps`` points.

    Raises:
        ConfigurationError: if num_steps < 2 or the beta bounds leave (0, 1)
            or are out of order.
    """
    if num_steps < 2:
        raise ConfigurationError(f"num_steps must be >= 2, got {num_steps}")
    if not (0.0 < beta_min <= beta_max):
        raise ConfigurationError(
            f"need 0 < beta_min <= beta_max, got beta_min={beta_min}, beta_max={beta_max}"
        )
    if beta_max >= 1.0:
        raise ConfigurationError(f"beta_max must be < 1, got beta_max={beta_max}")

    beta = np.linspace(beta_min, beta_max, num_steps, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.zeros(num_steps)
    # sigma[t] = sqrt(beta[t] * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])), t >= 1
    sigma[1:] = np.sqrt(beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar, sigma=sigma)


def noise_to_level(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Push a clean sample to noise level ``t`` along the forward marginal.

    Returns sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    if not 0 <= t < schedule.num_steps:
        raise ConfigurationError(f"step {t} outside [0, {schedule.num_steps})")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
