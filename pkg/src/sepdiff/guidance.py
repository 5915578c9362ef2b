"""Reconstruction loss, its gradient through the clean-sample estimate,
guidance-strength schedules, and the gradient-conflict bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConfigurationError, DimensionError, MetricUndefinedError
from .priors.base import ScoreModel, tweedie_x0
from .schedule import NoiseSchedule
from .signal import stft, stft_adjoint

__all__ = [
    "ReconsLossConfig",
    "GuidanceSchedule",
    "GRADIENT_MODES",
    "GUIDANCE_KINDS",
    "smoothmax",
    "recons_loss",
    "recons_loss_grad",
    "recons_grad",
    "gamma",
    "guidance_bound",
]

#: Wire strings accepted in run configurations.
GRADIENT_MODES = ("exact-jvp", "backprop", "identity-jacobian", "finite-difference")
GUIDANCE_KINDS = ("constant", "sigma-proportional", "hybrid")


@dataclass(frozen=True)
class ReconsLossConfig:
    """Weights and shape parameters of the composite reconstruction loss."""

    lambda_time: float = 1.0
    lambda_group: float = 0.05
    lambda_stft: float = 0.1
    group_count: int = 8
    stft_window: int = 510
    stft_hop: int = 255

    def __post_init__(self):
        if min(self.lambda_time, self.lambda_group, self.lambda_stft) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if max(self.lambda_time, self.lambda_group, self.lambda_stft) <= 0:
            raise ConfigurationError("at least one loss weight must be positive")
        if self.group_count < 1:
            raise ConfigurationError(f"group_count must be >= 1, got {self.group_count}")


@dataclass(frozen=True)
class GuidanceSchedule:
    """Guidance-strength schedule: constant, noise-proportional, or hybrid.

    The hybrid kind replaces the noise level by a soft maximum with a floor,
    keeping late-stage guidance from vanishing. ``norm_scope`` selects whether
    the normalizing gradient norm is taken per source (default) or over the
    concatenated gradient of all sources.
    """

    kind: str = "hybrid"
    const_value: float = 1.0
    s_floor: float = 0.002
    sharpness: float = 1000.0
    norm_scope: str = "per-source"

    def __post_init__(self):
        if self.kind not in GUIDANCE_KINDS:
            raise ConfigurationError(f"guidance kind must be one of {GUIDANCE_KINDS}")
        if self.kind == "hybrid" and (self.s_floor <= 0 or self.sharpness <= 0):
            raise ConfigurationError("hybrid schedule needs s_floor > 0 and sharpness > 0")
        if self.norm_scope not in ("per-source", "joint"):
            raise ConfigurationError(f"unknown norm_scope {self.norm_scope!r}")


def smoothmax(a: float, b: float, c: float) -> float:
    """(1/c) * log(exp(c*a) + exp(c*b)), computed without overflow.

    Always within [max(a, b), max(a, b) + ln(2)/c].
    """
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(-c * (hi - lo))) / c


# ---------------------------------------------------------------------------
# Composite reconstruction loss
# ---------------------------------------------------------------------------


def _check_pair(y: np.ndarray, y_hat: np.ndarray, config: ReconsLossConfig):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise DimensionError(f"waveform shapes differ: {y.shape} vs {y_hat.shape}")
    if len(y) % config.group_count != 0:
        raise DimensionError(
            f"length {len(y)} not divisible into {config.group_count} segments"
        )
    return y, y_hat


def recons_loss(y, y_hat, config: ReconsLossConfig = ReconsLossConfig()):
    """Weighted time + segment-mean + spectral-magnitude squared errors.

    Returns:
        (total, (time_term, group_term, stft_term)) with the raw unweighted
        component values.
    """
    y, y_hat = _check_pair(y, y_hat, config)
    diff = y_hat - y
    l_time = float(np.dot(diff, diff))
    seg = diff.reshape(config.group_count, -1)
    l_group = float(np.sum(seg * seg)) / config.group_count
    if config.lambda_stft != 0.0:
        mag_y = np.abs(stft(y, config.stft_window, config.stft_hop).bins)
        mag_h = np.abs(stft(y_hat, config.stft_window, config.stft_hop).bins)
        dm = mag_h - mag_y
        l_stft = float(np.sum(dm * dm))
    else:
        l_stft = 0.0
    total = (
        config.lambda_time * l_time
        + config.lambda_group * l_group
        + config.lambda_stft * l_stft
    )
    return total, (l_time, l_group, l_stft)


def recons_loss_grad(y, y_hat, config: ReconsLossConfig = ReconsLossConfig()):
    """Loss, components, and the exact gradient with respect to y_hat."""
    y, y_hat = _check_pair(y, y_hat, config)
    diff = y_hat - y
    l_time = float(np.dot(diff, diff))
    seg = diff.reshape(config.group_count, -1)
    l_group = float(np.sum(seg * seg)) / config.group_count
    grad = (2.0 * config.lambda_time + 2.0 * config.lambda_group / config.group_count) * diff

    if config.lambda_stft != 0.0:
        spec_y = stft(y, config.stft_window, config.stft_hop).bins
        spec_h = stft(y_hat, config.stft_window, config.stft_hop).bins
        mag_y = np.abs(spec_y)
        mag_h = np.abs(spec_h)
        dm = mag_h - mag_y
        l_stft = float(np.sum(dm * dm))
        # d|z|/dz via z/|z|; zero-magnitude bins take subgradient 0.
        with np.errstate(invalid="ignore", divide="ignore"):
            phase = np.where(mag_h > 0.0, spec_h / np.where(mag_h > 0.0, mag_h, 1.0), 0.0)
        cotangent = 2.0 * dm * phase
        grad = grad + config.lambda_stft * stft_adjoint(
            cotangent, len(y), config.stft_window, config.stft_hop
        )
    else:
        l_stft = 0.0

    total = (
        config.lambda_time * l_time
        + config.lambda_group * l_group
        + config.lambda_stft * l_stft
    )
    return total, (l_time, l_group, l_stft), grad


# ---------------------------------------------------------------------------
# Gradient with respect to each source's diffusion state
# ---------------------------------------------------------------------------


def _chain_through_estimate(model: ScoreModel, x_t, t, g, mode, schedule, label):
    """Pull a cotangent on x0_hat back to the diffusion state.

    d x0_hat / d x_t = (I + (1 - alpha_bar) * J_score) / sqrt(alpha_bar); the
    identity-jacobian mode drops J_score.
    """
    ab = schedule.alpha_bar[t]
    if mode == "identity-jacobian":
        return g / np.sqrt(ab)
    if mode not in model.gradient_modes:
        raise CapabilityError(f"{model.kind} does not support gradient mode {mode!r}")
    _, vjp = model.score_with_vjp(x_t, t, label)
    return (g + (1.0 - ab) * vjp(g)) / np.sqrt(ab)


def recons_grad(
    sources_xt,
    t: int,
    y,
    models,
    mode: str = "exact-jvp",
    config: ReconsLossConfig = ReconsLossConfig(),
    schedule: NoiseSchedule | None = None,
    labels=None,
    x0_hats=None,
):
    """Gradient of the reconstruction loss with respect to each source state.

    The reconstructed mixture is the sum of per-source clean estimates; the
    chain rule runs through each estimate back to its own diffusion state.

    Args:
        x0_hats: optional precomputed clean estimates (skips recomputing them).

    Returns:
        (per-source gradients, loss, raw components).
    """
    if mode not in GRADIENT_MODES:
        raise ConfigurationError(f"gradient mode must be one of {GRADIENT_MODES}")
    models = list(models)
    sources_xt = [np.asarray(x, dtype=np.float64) for x in sources_xt]
    if len(models) != len(sources_xt):
        raise DimensionError(f"{len(sources_xt)} states for {len(models)} models")
    labels = labels if labels is not None else [None] * len(models)
    sched = schedule if schedule is not None else models[0].schedule

    if mode == "finite-difference":
        return _recons_grad_fd(sources_xt, t, y, models, config, sched, labels)

    if x0_hats is None:
        x0_hats = [
            tweedie_x0(m, x, t, label=lab, schedule=sched)
            for m, x, lab in zip(models, sources_xt, labels)
        ]
    y_hat = np.sum(x0_hats, axis=0)
    loss, components, g = recons_loss_grad(y, y_hat, config)
    grads = [
        _chain_through_estimate(m, x, t, g, mode, sched, lab)
        for m, x, lab in zip(models, sources_xt, labels)
    ]
    return grads, loss, components


def _recons_grad_fd(sources_xt, t, y, models, config, sched, labels, h: float = 1e-6):
    """Central finite differences of the full composite; reference only."""

    def objective(states):
        x0s = [
            tweedie_x0(m, x, t, label=lab, schedule=sched)
            for m, x, lab in zip(models, states, labels)
        ]
        return recons_loss(y, np.sum(x0s, axis=0), config)[0]

    loss, components = recons_loss(
        y,
        np.sum(
            [
                tweedie_x0(m, x, t, label=lab, schedule=sched)
                for m, x, lab in zip(models, sources_xt, labels)
            ],
            axis=0,
        ),
        config,
    )
    grads = []
    for k, x in enumerate(sources_xt):
        g = np.zeros_like(x)
        for i in range(len(x)):
            xp = [s.copy() for s in sources_xt]
            xm = [s.copy() for s in sources_xt]
            xp[k][i] += h
            xm[k][i] -= h
            g[i] = (objective(xp) - objective(xm)) / (2.0 * h)
        grads.append(g)
    return grads, loss, components


# ---------------------------------------------------------------------------
# Guidance strength and the conflict bound
# ---------------------------------------------------------------------------


def gamma(
    schedule_kind: GuidanceSchedule,
    t: int,
    grad_norm: float,
    n: int,
    noise: NoiseSchedule,
) -> float | None:
    """Guidance strength at step t.

    For the normalized kinds a zero gradient norm means guidance is skipped
    for this step: the sentinel None is returned rather than raising.
    """
    if schedule_kind.kind == "constant":
        return schedule_kind.const_value
    if grad_norm <= 0.0:
        return None
    sigma = float(noise.sigma[t])
    if schedule_kind.kind == "sigma-proportional":
        strength = sigma
    else:
        strength = smoothmax(sigma, schedule_kind.s_floor, schedule_kind.sharpness)
    return strength * math.sqrt(n) / grad_norm


def guidance_bound(g_prior: np.ndarray, g_cond: np.ndarray) -> float:
    """Minimum guidance strength for the combined update to progress.

    Returns -(g_prior . g_cond) / ||g_cond||^2; positive values signal a
    conflict between the prior and conditional gradients.
    """
    g_prior = np.asarray(g_prior, dtype=np.float64)
    g_cond = np.asarray(g_cond, dtype=np.float64)
    denom = float(np.dot(g_cond, g_cond))
    if denom == 0.0:
        raise MetricUndefinedError("guidance bound undefined for a zero conditional gradient")
    return -float(np.dot(g_prior, g_cond)) / denom
