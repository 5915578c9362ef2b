"""Post-hoc analysis of guidance traces: per-step series and schedule curves."""

from __future__ import annotations

import csv
import math

import numpy as np

from .guidance import GuidanceSchedule, smoothmax
from .schedule import NoiseSchedule
from .separator import GuidanceTrace

__all__ = ["schedule_curves", "trace_series", "trace_summary", "write_series_csv",
           "write_schedule_curves_csv"]


def schedule_curves(noise: NoiseSchedule, guidance: GuidanceSchedule) -> dict:
    """Unnormalized strength curves over all steps (no gradient norm, no sqrt(N)).

    Returns per-step arrays for the noise level, the constant strategy, the
    noise-proportional strategy, and the hybrid soft-maximum strategy.
    """
    sigma = np.asarray(noise.sigma, dtype=np.float64)
    hybrid = np.array(
        [smoothmax(s, guidance.s_floor, guidance.sharpness) for s in sigma]
    )
    return {
        "step": np.arange(noise.num_steps),
        "sigma": sigma,
        "constant": np.full(noise.num_steps, guidance.const_value),
        "dsg": sigma.copy(),
        "hybrid": hybrid,
    }


def trace_series(trace: GuidanceTrace, signal_length: int | None = None) -> dict:
    """Per-record series from a trace, with the conditional-update RMS.

    The update applied at each step has norm gamma * grad_norm; its RMS needs
    the signal length, so that column is only present when it is known.
    """
    series = {
        "step": trace.column("step").astype(int),
        "source": trace.column("source").astype(int),
        "loss": trace.column("loss"),
        "gamma": trace.column("gamma"),
        "grad_norm": trace.column("grad_norm"),
        "guidance_bound": trace.column("guidance_bound"),
        "x0_energy": trace.column("x0_energy"),
        "update_norm": trace.column("gamma") * trace.column("grad_norm"),
    }
    if signal_length:
        series["update_rms"] = series["update_norm"] / math.sqrt(signal_length)
    if trace.has_si_sdr:
        series["si_sdr"] = trace.column("si_sdr")
    return series


def _quartile_medians(steps: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Median of the earliest and latest quartiles of the reverse run.

    Steps count down during sampling, so the first quartile in time is the
    top quarter of step indices.
    """
    order = np.argsort(-steps, kind="stable")
    v = values[order]
    q = max(1, len(v) // 4)
    return float(np.median(v[:q])), float(np.median(v[-q:]))


def trace_summary(trace: GuidanceTrace) -> dict:
    """Per-source first/last-quartile medians of the conflict metric and loss."""
    steps = trace.column("step")
    sources = trace.column("source").astype(int)
    summary = {"sources": {}}
    for s in sorted(set(sources.tolist())):
        mask = sources == s
        b_first, b_last = _quartile_medians(steps[mask], trace.column("guidance_bound")[mask])
        l_first, l_last = _quartile_medians(steps[mask], trace.column("loss")[mask])
        summary["sources"][str(s)] = {
            "guidance_bound_first_quartile_median": b_first,
            "guidance_bound_last_quartile_median": b_last,
            "loss_first_quartile_median": l_first,
            "loss_last_quartile_median": l_last,
        }
    return summary


def write_series_csv(path, series: dict) -> None:
    names = list(series)
    rows = len(series[names[0]])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for i in range(rows):
            writer.writerow(
                [
                    int(series[n][i]) if n in ("step", "source") else f"{series[n][i]:.12g}"
                    for n in names
                ]
            )


def write_schedule_curves_csv(path, curves: dict) -> None:
    write_series_csv(path, curves)
