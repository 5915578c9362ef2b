"""Command-line surface: train-prior, synth-mix, separate, analyze-guidance, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command writes
its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import functools
import json
import shutil
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, config as cfgmod
from .errors import ConfigurationError, DivergenceError, SchemaError, SepdiffError
from .guidance import GuidanceSchedule
from .metrics import EvalReport, evaluate
from .priors import (
    GaussianPrior,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_denoiser,
)
from .priors.denoiser import DenoiserConfig
from .separator import GuidanceTrace, SeparationProblem, separate, separate_analytic
from .signal import Waveform, crop_or_pad, load_manifest, make_mixture, read_wav, write_wav

_GUIDANCE_CHOICES = ("constant", "dsg", "hybrid", "analytic")
_KIND_BY_CHOICE = {"constant": "constant", "dsg": "sigma-proportional", "hybrid": "hybrid"}


def _runtime_errors(func):
    """Convert toolkit errors into exit code 1 with a readable message."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except DivergenceError as exc:
            raise click.ClickException(f"diverged at step {exc.step}: {exc}") from exc
        except (SepdiffError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
def main():
    """Unsupervised source separation with diffusion priors."""


# ---------------------------------------------------------------------------
# train-prior
# ---------------------------------------------------------------------------


def _collect_dataset(dataset_dir: Path, rate: int, length: int):
    """WAVs in the directory root, or per-class subdirectories for labels."""
    flat = sorted(dataset_dir.glob("*.wav"))
    if flat:
        signals = [crop_or_pad(read_wav(p, rate=rate).samples, length) for p in flat]
        return np.stack(signals), None, None
    vocab = sorted(d.name for d in dataset_dir.iterdir() if d.is_dir() and list(d.glob("*.wav")))
    signals, labels = [], []
    for name in vocab:
        for p in sorted((dataset_dir / name).glob("*.wav")):
            signals.append(crop_or_pad(read_wav(p, rate=rate).samples, length))
            labels.append(name)
    if not signals:
        raise click.UsageError(f"empty dataset directory: {dataset_dir}")
    return np.stack(signals), labels, tuple(vocab)


@main.command("train-prior")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", type=int, default=None, help="Override training step count.")
@click.option("--seed", type=int, default=None)
@_runtime_errors
def cmd_train_prior(dataset, out, config_path, steps, seed):
    """Train a denoising prior on a directory of WAV files."""
    cfg = cfgmod.load_config(config_path)
    if steps is not None:
        cfg["train"]["steps"] = steps
    if seed is not None:
        cfg["seed"] = seed
    schedule = cfgmod.build_schedule(cfg)
    rate = int(cfg["sample_rate"])
    length = int(rate * float(cfg["clip_seconds"])) // 4 * 4

    data, labels, vocab = _collect_dataset(Path(dataset), rate, length)
    net_cfg = cfg["train"]["net"]
    train_cfg = TrainConfig(
        steps=int(cfg["train"]["steps"]),
        batch_size=int(cfg["train"]["batch_size"]),
        learning_rate=float(cfg["train"]["learning_rate"]),
        net=DenoiserConfig(
            channels=int(net_cfg["channels"]),
            kernel=int(net_cfg["kernel"]),
            embed_dim=int(net_cfg["embed_dim"]),
            hidden_dim=int(net_cfg["hidden_dim"]),
        ),
    )
    model, losses = train_denoiser(
        data, schedule, train_cfg, seed=int(cfg["seed"]), class_labels=labels, class_vocab=vocab
    )

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model)
    with open(out.with_suffix(out.suffix + ".loss.csv"), "w") as f:
        f.write("step,loss\n")
        for i, v in enumerate(losses):
            f.write(f"{i},{v:.12g}\n")
    cfgmod.write_resolved(cfg, out.with_suffix(out.suffix + ".config.json"))
    click.echo(
        f"trained {model.net.param_count} parameters on {len(data)} signals; "
        f"loss {losses[0]:.4f} -> {losses[-1]:.4f}; checkpoint {out}"
    )


# ---------------------------------------------------------------------------
# synth-mix
# ---------------------------------------------------------------------------


@main.command("synth-mix")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_runtime_errors
def cmd_synth_mix(manifest, out):
    """Render mixtures and reference sources from a JSON manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for mixture_id, spec in load_manifest(manifest):
        y, refs = make_mixture(spec)
        mdir = out / mixture_id
        mdir.mkdir(parents=True, exist_ok=True)
        write_wav(mdir / "mix.wav", y)
        for i, r in enumerate(refs, start=1):
            write_wav(mdir / f"s{i}.wav", r)
    shutil.copyfile(manifest, out / "manifest.json")
    click.echo(f"wrote {len(load_manifest(manifest))} mixtures under {out}")


# ---------------------------------------------------------------------------
# separate
# ---------------------------------------------------------------------------


def _build_priors(cfg: dict, schedule):
    prior = cfg["prior"]
    kind = prior.get("kind", "toy-denoiser")
    if kind == "toy-denoiser":
        paths = prior.get("checkpoints") or []
        if len(paths) < 2:
            raise ConfigurationError("prior.checkpoints must list one checkpoint per source")
        models = tuple(load_checkpoint(p, schedule) for p in paths)
        labels = tuple(prior.get("labels") or (None,) * len(models))
        return models, labels
    if kind == "analytic-gaussian":
        means = prior.get("means")
        covs = prior.get("covs")
        if not means or not covs or len(means) != len(covs):
            raise ConfigurationError("analytic-gaussian prior needs matching means and covs")
        models = []
        for mean, cov in zip(means, covs):
            mean = np.asarray(mean, dtype=np.float64)
            cov_arr = np.asarray(cov, dtype=np.float64)
            if cov_arr.ndim == 0:
                cov_arr = np.full(len(mean), float(cov_arr))
            models.append(GaussianPrior(mean, cov_arr, schedule))
        return tuple(models), (None,) * len(models)
    raise ConfigurationError(f"unknown prior kind {kind!r}")


@main.command("separate")
@click.option("--mixture", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--guidance", type=click.Choice(_GUIDANCE_CHOICES), default=None)
@click.option("--const", type=float, default=None, help="Constant-schedule strength.")
@click.option("--seed", type=int, default=None)
@click.option("--t-star", type=int, default=None)
@click.option("--init", "init_kind", type=click.Choice(["unified", "independent"]), default=None)
@_runtime_errors
def cmd_separate(mixture, out, config_path, guidance, const, seed, t_star, init_kind):
    """Separate one mixture directory into per-source estimates plus a trace."""
    cfg = cfgmod.load_config(config_path)
    analytic = guidance == "analytic"
    if guidance is not None and not analytic:
        cfg["guidance"]["kind"] = _KIND_BY_CHOICE[guidance]
    if const is not None:
        cfg["guidance"]["const_value"] = const
    if seed is not None:
        cfg["seed"] = seed
    if t_star is not None:
        cfg["init"]["t_star"] = t_star
    if init_kind is not None:
        cfg["init"]["kind"] = init_kind
    cfg["method"] = "analytic" if analytic else "gradient"

    schedule = cfgmod.build_schedule(cfg)
    models, labels = _build_priors(cfg, schedule)

    mdir = Path(mixture)
    mix = read_wav(mdir / "mix.wav", rate=None)
    ref_paths = sorted(p for p in mdir.glob("s*.wav"))
    references = [read_wav(p, rate=None).samples for p in ref_paths] or None
    if references is not None and len(references) != len(models):
        references = None  # reference layout does not match source count; skip per-step SI-SDR

    problem = SeparationProblem(
        y=mix.samples,
        models=models,
        schedule=schedule,
        guidance=cfgmod.build_guidance(cfg),
        loss_config=cfgmod.build_loss_config(cfg),
        gradient_mode=cfg["gradient_mode"],
        init_kind=cfg["init"]["kind"],
        t_star=cfgmod.validate_t_star(cfg),
        seed=int(cfg["seed"]),
        labels=labels,
    )

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = (separate_analytic if analytic else separate)(problem, references)
    except DivergenceError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(out / "trace.csv")
        cfgmod.write_resolved(cfg, out / "config.json")
        raise
    for i in range(problem.num_sources):
        write_wav(out / f"s{i + 1}.wav", Waveform(result.sources[i], mix.rate))
    result.trace.to_csv(out / "trace.csv")
    cfgmod.write_resolved(cfg, out / "config.json")
    click.echo(
        f"separated {problem.num_sources} sources over {problem.t_star} steps; "
        f"final loss {result.trace.loss[-1]:.6g}; outputs in {out}"
    )


# ---------------------------------------------------------------------------
# analyze-guidance
# ---------------------------------------------------------------------------


@main.command("analyze-guidance")
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--signal-length", type=int, default=None, help="For update-RMS series.")
@_runtime_errors
def cmd_analyze_guidance(traces, out, config_path, signal_length):
    """Emit figure-ready per-step series and schedule curves from trace files."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    if config_path is None:
        sibling = Path(traces[0]).parent / "config.json"
        config_path = str(sibling) if sibling.exists() else None
    cfg = cfgmod.load_config(config_path)
    schedule = cfgmod.build_schedule(cfg)
    analysis.write_schedule_curves_csv(
        out / "schedule_curves.csv",
        analysis.schedule_curves(schedule, cfgmod.build_guidance(cfg)),
    )

    summary = {}
    for trace_path in traces:
        trace = GuidanceTrace.from_csv(trace_path)
        stem = Path(trace_path).parent.name or Path(trace_path).stem
        series = analysis.trace_series(trace, signal_length)
        analysis.write_series_csv(out / f"{stem}_series.csv", series)
        summary[stem] = analysis.trace_summary(trace)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    click.echo(f"analyzed {len(traces)} trace(s) into {out}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _source_files(d: Path) -> list:
    return sorted(p for p in d.glob("s*.wav"))


def _mixture_dirs(root: Path) -> list:
    if _source_files(root):
        return [root]
    return sorted(d for d in root.iterdir() if d.is_dir() and _source_files(d))


@main.command("eval")
@click.option("--estimates", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--references", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_runtime_errors
def cmd_eval(estimates, references, out):
    """Score estimate directories against reference directories."""
    est_dirs = _mixture_dirs(Path(estimates))
    ref_dirs = _mixture_dirs(Path(references))
    if len(est_dirs) != len(ref_dirs):
        raise SchemaError(
            f"{len(est_dirs)} estimate directories vs {len(ref_dirs)} reference directories"
        )
    report = EvalReport()
    for ed, rd in zip(est_dirs, ref_dirs):
        est_files = _source_files(ed)
        ref_files = _source_files(rd)
        if len(est_files) != len(ref_files):
            raise SchemaError(f"{ed}: {len(est_files)} estimates vs {len(ref_files)} references")
        ests = [read_wav(p, rate=None).samples for p in est_files]
        refs = [read_wav(p, rate=None).samples for p in ref_files]
        report.add(evaluate(ests, refs))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        f.write(report.to_json())
    report.write_csv(out / "report.csv")
    click.echo(
        f"mean SI-SDR {report.mean_si_sdr_db:.2f} dB, "
        f"failure rate {report.failure_rate * 100.0:.1f}% over {len(report.entries)} mixtures"
    )


if __name__ == "__main__":
    sys.exit(main())
