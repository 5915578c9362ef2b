"""Denoising objective training for the toy prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError, TrainingDivergedError
from ..schedule import NoiseSchedule
from .denoiser import DenoiserConfig, DenoiserNet, ToyDenoiser

__all__ = ["TrainConfig", "train_denoiser"]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    net: DenoiserConfig = DenoiserConfig()


class _Adam:
    def __init__(self, shapes: dict, config: TrainConfig):
        self.m = {k: np.zeros(v.shape) for k, v in shapes.items()}
        self.v = {k: np.zeros(v.shape) for k, v in shapes.items()}
        self.t = 0
        self.cfg = config

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1**self.t
        bc2 = 1.0 - c.adam_beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.adam_beta1 * self.m[k] + (1.0 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1.0 - c.adam_beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)


def train_denoiser(
    dataset,
    schedule: NoiseSchedule,
    config: TrainConfig,
    seed: int,
    class_labels=None,
    class_vocab: tuple | None = None,
) -> tuple[ToyDenoiser, np.ndarray]:
    """Fit the noise predictor on clean signals; bit-reproducible given seed.

    Args:
        dataset: (N, L) array (or list of equal-length 1-D signals).
        class_labels: optional per-signal labels drawn from class_vocab; when
            given the model is trained class-conditionally.

    Returns:
        (trained model, per-step training losses).

    Raises:
        TrainingDivergedError: if the loss becomes non-finite, with the step.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DimensionError("dataset must be a nonempty (N, L) collection of equal-length signals")
    n, length = data.shape
    if length % 4 != 0:
        raise DimensionError(f"signal length {length} must be divisible by 4")

    label_idx = None
    if class_labels is not None:
        if class_vocab is None:
            raise ConfigurationError("class_labels given without class_vocab")
        vocab = tuple(class_vocab)
        label_idx = np.array([vocab.index(c) for c in class_labels], dtype=np.int64)
    else:
        vocab = None

    net = DenoiserNet(config.net, num_classes=len(vocab) if vocab else 0)
    rng = np.random.default_rng(seed)
    params = net.init_params(rng)
    opt = _Adam(params, config)

    losses = np.empty(config.steps)
    num_levels = schedule.num_steps
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        t = rng.integers(0, num_levels, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, length))
        ab = schedule.alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * data[idx] + np.sqrt(1.0 - ab) * eps
        batch_labels = label_idx[idx] if label_idx is not None else None

        eps_hat, cache = net.forward(params, x_t, t, batch_labels, want_cache=True)
        resid = eps_hat - eps
        loss = float(np.mean(resid * resid))
        losses[step] = loss
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became non-finite at step {step}", step=step)

        g_eps = (2.0 / resid.size) * resid
        grads = net.param_grads(params, cache, g_eps)
        opt.step(params, grads)

    model = ToyDenoiser(net, params, schedule, class_vocab=vocab)
    return model, losses
