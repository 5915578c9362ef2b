"""Score model interface and the clean-sample (posterior mean) estimate."""

from __future__ import annotations

import abc

import numpy as np

from ..errors import CapabilityError, ConfigurationError, NumericError, UnknownLabelError
from ..schedule import NoiseSchedule

__all__ = ["ScoreModel", "tweedie_x0"]


class ScoreModel(abc.ABC):
    """Estimate of the gradient of the log marginal density at each noise level.

    Implementations are immutable after construction; ``score`` is a pure
    function of its inputs and safe to call concurrently.
    """

    kind: str
    schedule: NoiseSchedule
    class_vocab: tuple | None = None

    #: GradientMode kinds this model can serve (wire strings from the run config).
    gradient_modes: frozenset = frozenset({"finite-difference", "identity-jacobian"})

    def _check_inputs(self, x: np.ndarray, t: int, label) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NumericError("score input contains non-finite values")
        if not 0 <= t < self.schedule.num_steps:
            raise ConfigurationError(f"step {t} outside [0, {self.schedule.num_steps})")
        if label is not None:
            if self.class_vocab is None or label not in self.class_vocab:
                raise UnknownLabelError(f"unknown class label {label!r}")
        return x

    @abc.abstractmethod
    def score(self, x: np.ndarray, t: int, label=None) -> np.ndarray:
        """Gradient of log p_t at x; output shape equals input shape."""

    def score_with_vjp(self, x: np.ndarray, t: int, label=None):
        """Score plus a closure computing (d score / d x)^T v.

        Models that cannot provide an exact or backpropagated Jacobian product
        raise CapabilityError; callers may then fall back to the
        identity-Jacobian mode.
        """
        raise CapabilityError(f"{self.kind} does not support Jacobian products")

    def score_vjp(self, x: np.ndarray, t: int, v: np.ndarray, label=None) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if np.asarray(x).shape != v.shape:
            raise NumericError(f"v shape {v.shape} != x shape {np.asarray(x).shape}")
        _, vjp = self.score_with_vjp(x, t, label)
        return vjp(v)


def tweedie_x0(
    model: ScoreModel, x: np.ndarray, t: int, label=None, schedule: NoiseSchedule | None = None
) -> np.ndarray:
    """Posterior-mean estimate of the clean sample from a noisy state.

    Returns (x + (1 - alpha_bar[t]) * score(x, t)) / sqrt(alpha_bar[t]).
    """
    sched = schedule if schedule is not None else model.schedule
    ab = sched.alpha_bar[t]
    return (np.asarray(x, dtype=np.float64) + (1.0 - ab) * model.score(x, t, label)) / np.sqrt(ab)
