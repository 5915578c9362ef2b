"""Separation quality metrics: SI-SDR, permutation resolution, failure rate."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import DimensionError, MetricUndefinedError
from .signal import Waveform

__all__ = ["SI_SDR_CLAMP_DB", "MixtureEval", "EvalReport", "si_sdr", "evaluate"]

# Perfect (or numerically perfect) estimates clamp here instead of +inf so
# aggregates stay finite.
SI_SDR_CLAMP_DB = 100.0

_MAX_PERMUTATION_SOURCES = 4


def _as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Projects the estimate onto the reference and compares the projection
    energy against the residual energy; invariant to positive rescaling of
    the estimate.
    """
    e = _as_samples(est)
    r = _as_samples(ref)
    if e.shape != r.shape:
        raise DimensionError(f"estimate shape {e.shape} != reference shape {r.shape}")
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise MetricUndefinedError("SI-SDR undefined for an all-zero reference")
    s = (float(np.dot(e, r)) / ref_energy) * r
    noise = e - s
    num = float(np.dot(s, s))
    den = float(np.dot(noise, noise))
    if den == 0.0 or 10.0 * np.log10(num / den) > SI_SDR_CLAMP_DB:
        return SI_SDR_CLAMP_DB
    return float(10.0 * np.log10(num / den))


@dataclass
class MixtureEval:
    """Per-mixture evaluation: best permutation and its per-source scores."""

    si_sdr_db: list  # per source, in reference order, under the best permutation
    permutation: tuple  # permutation[i] = index of the estimate assigned to ref i
    failed: bool

    @property
    def mean_si_sdr_db(self) -> float:
        return float(np.mean(self.si_sdr_db))


@dataclass
class EvalReport:
    """Aggregate over a set of mixtures."""

    entries: list = field(default_factory=list)

    def add(self, entry: MixtureEval) -> None:
        self.entries.append(entry)

    @property
    def mean_si_sdr_db(self) -> float:
        return float(np.mean([e.mean_si_sdr_db for e in self.entries]))

    @property
    def failure_rate(self) -> float:
        return float(np.mean([e.failed for e in self.entries]))

    def to_json(self) -> str:
        doc = {
            "mean_si_sdr_db": self.mean_si_sdr_db,
            "failure_rate": self.failure_rate,
            "mixtures": [
                {
                    "si_sdr_db": [float(v) for v in e.si_sdr_db],
                    "permutation": list(e.permutation),
                    "failed": bool(e.failed),
                }
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        """One row per mixture-source pair."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["mixture", "source", "si_sdr_db", "failed"])
            for i, e in enumerate(self.entries):
                for k, v in enumerate(e.si_sdr_db):
                    writer.writerow([i, k, f"{v:.6f}", int(e.failed)])


def evaluate(ests, refs) -> MixtureEval:
    """Score one mixture: exhaustive permutation search, then the failure rule.

    The permutation maximizing mean SI-SDR is selected; the mixture is flagged
    as failed when that best mean is below 0 dB.
    """
    if len(ests) != len(refs):
        raise DimensionError(f"{len(ests)} estimates vs {len(refs)} references")
    k = len(refs)
    if k > _MAX_PERMUTATION_SOURCES:
        raise DimensionError(
            f"exhaustive permutation search limited to {_MAX_PERMUTATION_SOURCES} sources"
        )
    pairwise = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            pairwise[i, j] = si_sdr(ests[i], refs[j])

    best_perm, best_mean = None, -np.inf
    for perm in permutations(range(k)):
        mean = float(np.mean([pairwise[perm[j], j] for j in range(k)]))
        if mean > best_mean:
            best_perm, best_mean = perm, mean
    scores = [float(pairwise[best_perm[j], j]) for j in range(k)]
    return MixtureEval(si_sdr_db=scores, permutation=best_perm, failed=best_mean < 0.0)
