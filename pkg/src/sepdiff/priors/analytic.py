"""Analytic priors with closed-form scores and Jacobian products.

These exist to verify the samplers: for a Gaussian prior the noisy marginal
at level t is itself Gaussian with covariance alpha_bar * Sigma +
(1 - alpha_bar) * I, so the score, its Jacobian, and the full posterior of the
separation problem are all available in closed form.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..schedule import NoiseSchedule
from .base import ScoreModel

__all__ = ["GaussianPrior", "GaussianMixturePrior"]


def _validate_cov(cov: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (eigenvalues, eigenvectors); raises if not symmetric PD."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 1:
        if cov.shape != (dim,):
            raise ConfigurationError(f"diagonal covariance length {cov.shape} != dim {dim}")
        cov = np.diag(cov)
    if cov.shape != (dim, dim):
        raise ConfigurationError(f"covariance shape {cov.shape} != ({dim}, {dim})")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ConfigurationError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("covariance is not positive definite") from exc
    evals, evecs = np.linalg.eigh(cov)
    return evals, evecs


class GaussianPrior(ScoreModel):
    """x0 ~ N(mean, cov); the level-t marginal is Gaussian too."""

    kind = "analytic-gaussian"
    gradient_modes = frozenset({"exact-jvp", "identity-jacobian", "finite-difference"})

    def __init__(self, mean, cov, schedule: NoiseSchedule):
        self.mean = np.asarray(mean, dtype=np.float64)
        if self.mean.ndim != 1:
            raise ConfigurationError("mean must be a vector")
        self.dim = len(self.mean)
        self._evals, self._evecs = _validate_cov(cov, self.dim)
        self.cov = (self._evecs * self._evals) @ self._evecs.T
        self.schedule = schedule

    def _marginal_evals(self, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar[t]
        return ab * self._evals + (1.0 - ab)

    def marginal_cov(self, t: int) -> np.ndarray:
        """Covariance of the level-t marginal (for tests and oracles)."""
        return (self._evecs * self._marginal_evals(t)) @ self._evecs.T

    def score(self, x, t, label=None):
        x = self._check_inputs(x, t, label)
        ab = self.schedule.alpha_bar[t]
        d = x - np.sqrt(ab) * self.mean
        return -self._evecs @ ((self._evecs.T @ d) / self._marginal_evals(t))

    def score_with_vjp(self, x, t, label=None):
        s = self.score(x, t, label)
        evals_t = self._marginal_evals(t)

        def vjp(v):
            # Jacobian is the constant -Sigma_t^{-1} (symmetric).
            return -self._evecs @ ((self._evecs.T @ np.asarray(v, dtype=np.float64)) / evals_t)

        return s, vjp

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        return self.mean + self._evecs @ (np.sqrt(self._evals) * z)


class GaussianMixturePrior(ScoreModel):
    """x0 ~ sum_i w_i N(mean_i, cov_i); score via responsibilities."""

    kind = "analytic-gmm"
    gradient_modes = frozenset({"exact-jvp", "identity-jacobian", "finite-difference"})

    def __init__(self, means, covs, weights, schedule: NoiseSchedule):
        self.means = np.asarray(means, dtype=np.float64)
        if self.means.ndim != 2:
            raise ConfigurationError("means must be (components, dim)")
        self.n_components, self.dim = self.means.shape
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.n_components,) or np.any(weights <= 0):
            raise ConfigurationError("weights must be positive, one per component")
        self.weights = weights / weights.sum()
        if len(covs) != self.n_components:
            raise ConfigurationError("one covariance per component required")
        self._eigs = [_validate_cov(c, self.dim) for c in covs]
        self.schedule = schedule

    def _component_stats(self, x: np.ndarray, t: int):
        """Per-component log density and score at level t."""
        ab = self.schedule.alpha_bar[t]
        logs = np.empty(self.n_components)
        comp_scores = np.empty((self.n_components, self.dim))
        for i, (evals, evecs) in enumerate(self._eigs):
            evals_t = ab * evals + (1.0 - ab)
            d = x - np.sqrt(ab) * self.means[i]
            u = evecs.T @ d
            maha = np.sum(u * u / evals_t)
            logs[i] = (
                np.log(self.weights[i])
                - 0.5 * (maha + np.sum(np.log(evals_t)) + self.dim * np.log(2.0 * np.pi))
            )
            comp_scores[i] = -evecs @ (u / evals_t)
        return logs, comp_scores

    def _responsibilities(self, logs: np.ndarray) -> np.ndarray:
        m = logs.max()
        r = np.exp(logs - m)
        return r / r.sum()

    def score(self, x, t, label=None):
        x = self._check_inputs(x, t, label)
        logs, comp_scores = self._component_stats(x, t)
        return self._responsibilities(logs) @ comp_scores

    def score_with_vjp(self, x, t, label=None):
        x = self._check_inputs(x, t, label)
        ab = self.schedule.alpha_bar[t]
        logs, comp_scores = self._component_stats(x, t)
        r = self._responsibilities(logs)
        s = r @ comp_scores

        def vjp(v):
            # Hessian of log p: sum_i r_i (-Sigma_ti^{-1} + m_i m_i^T) - s s^T.
            v = np.asarray(v, dtype=np.float64)
            out = -s * float(s @ v)
            for i, (evals, evecs) in enumerate(self._eigs):
                evals_t = ab * evals + (1.0 - ab)
                siv = evecs @ ((evecs.T @ v) / evals_t)
                out += r[i] * (-siv + comp_scores[i] * float(comp_scores[i] @ v))
            return out

        return s, vjp

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        i = rng.choice(self.n_components, p=self.weights)
        evals, evecs = self._eigs[i]
        z = rng.standard_normal(self.dim)
        return self.means[i] + evecs @ (np.sqrt(evals) * z)
