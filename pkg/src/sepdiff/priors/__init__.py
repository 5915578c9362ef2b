"""Score models: analytic priors with exact Jacobians and a trainable denoiser."""

from .base import ScoreModel, tweedie_x0
from .analytic import GaussianPrior, GaussianMixturePrior
from .denoiser import ToyDenoiser, DenoiserNet
from .training import TrainConfig, train_denoiser
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "ScoreModel",
    "tweedie_x0",
    "GaussianPrior",
    "GaussianMixturePrior",
    "ToyDenoiser",
    "DenoiserNet",
    "TrainConfig",
    "train_denoiser",
    "save_checkpoint",
    "load_checkpoint",
]
