"""Unsupervised source separation by guided reverse diffusion sampling."""

from .schedule import NoiseSchedule, make_linear_schedule, noise_to_level
from .guidance import (
    GuidanceSchedule,
    ReconsLossConfig,
    gamma,
    guidance_bound,
    recons_grad,
    recons_loss,
    smoothmax,
)
from .separator import (
    GuidanceTrace,
    SeparationProblem,
    SeparationResult,
    initialize,
    separate,
    separate_analytic,
)
from .metrics import EvalReport, evaluate, si_sdr
from .signal import MixtureSpec, Spectrogram, Waveform, istft, make_mixture, read_wav, stft, write_wav
from .priors import (
    GaussianMixturePrior,
    GaussianPrior,
    ToyDenoiser,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_denoiser,
    tweedie_x0,
)

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule",
    "make_linear_schedule",
    "noise_to_level",
    "GuidanceSchedule",
    "ReconsLossConfig",
    "gamma",
    "guidance_bound",
    "recons_grad",
    "recons_loss",
    "smoothmax",
    "GuidanceTrace",
    "SeparationProblem",
    "SeparationResult",
    "initialize",
    "separate",
    "separate_analytic",
    "EvalReport",
    "evaluate",
    "si_sdr",
    "MixtureSpec",
    "Spectrogram",
    "Waveform",
    "istft",
    "make_mixture",
    "read_wav",
    "stft",
    "write_wav",
    "GaussianMixturePrior",
    "GaussianPrior",
    "ToyDenoiser",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train_denoiser",
    "tweedie_x0",
]
