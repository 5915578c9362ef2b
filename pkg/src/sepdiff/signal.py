"""Waveform I/O, STFT/ISTFT, resampling, and synthetic mixture generation.

The STFT here is deliberately hand-rolled: the guidance module needs the
exact adjoint of the linear map samples -> complex bins (``stft_adjoint``)
to backpropagate the spectral magnitude loss, so both directions share one
framing convention defined in this file and nowhere else.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, IngestionError, SchemaError

__all__ = [
    "SAMPLE_RATE",
    "CLIP_SECONDS",
    "Waveform",
    "Spectrogram",
    "MixtureSpec",
    "stft",
    "istft",
    "stft_adjoint",
    "sqrt_hann",
    "resample",
    "read_wav",
    "write_wav",
    "make_mixture",
    "crop_or_pad",
    "scale_to_rms_db",
    "rms_db",
    "harmonic_tone",
    "band_noise_burst",
    "chirp",
    "synthesize_source",
]

SAMPLE_RATE = 16000
CLIP_SECONDS = 4.0

# Headroom guard: nominal range is [-1, 1] but intermediate sums may exceed it.
_MAX_ABS_SAMPLE = 4.0


@dataclass
class Waveform:
    """Fixed-rate mono sample buffer."""

    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DimensionError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise IngestionError("waveform contains non-finite samples")
        peak = float(np.max(np.abs(self.samples), initial=0.0))
        if peak > _MAX_ABS_SAMPLE:
            raise IngestionError(
                f"waveform peak {peak:.3f} exceeds headroom limit {_MAX_ABS_SAMPLE}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class Spectrogram:
    """Complex time-frequency array with its framing metadata."""

    bins: np.ndarray  # (frames, window_len // 2 + 1) complex
    window_len: int
    hop: int
    window: str = "sqrt_hann"

    @property
    def num_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.bins.shape[1]


def sqrt_hann(window_len: int) -> np.ndarray:
    """Square root of the periodic Hann window (COLA pair at hop = len/2)."""
    n = np.arange(window_len)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_len))


def _reflect_pad_indices(n: int, pad: int) -> np.ndarray:
    if n <= pad:
        raise DimensionError(f"signal of {n} samples too short to reflect-pad by {pad}")
    left = np.arange(pad, 0, -1)
    right = n - 2 - np.arange(pad)
    return np.concatenate([left, np.arange(n), right])


def _framing(n: int, window_len: int, hop: int):
    """Frame-start index matrix and padded length for a signal of n samples.

    Center padding of window_len // 2 on each side, then the frame count is
    rounded *up* so overlap-add covers the whole cropped region exactly.
    """
    pad = window_len // 2
    covered = n + 2 * pad
    num_frames = 1 + math.ceil((covered - window_len) / hop)
    padded_len = (num_frames - 1) * hop + window_len
    starts = np.arange(num_frames) * hop
    frame_idx = starts[:, None] + np.arange(window_len)[None, :]
    return pad, padded_len, frame_idx


def _check_stft_params(n: int, window_len: int, hop: int) -> None:
    if window_len % 2 != 0:
        raise ConfigurationError(f"window_len must be even, got {window_len}")
    if not 0 < hop <= window_len:
        raise ConfigurationError(f"hop must be in (0, window_len], got {hop}")
    if n < window_len:
        raise DimensionError(f"signal of {n} samples shorter than one {window_len} frame")


def stft(
    samples: np.ndarray | Waveform,
    window_len: int = 510,
    hop: int = 255,
    window: str = "sqrt_hann",
) -> Spectrogram:
    """Complex STFT with center (reflection) padding and sqrt-Hann analysis."""
    if isinstance(samples, Waveform):
        samples = samples.samples
    x = np.asarray(samples, dtype=np.float64)
    _check_stft_params(len(x), window_len, hop)
    if window != "sqrt_hann":
        raise ConfigurationError(f"unknown window {window!r}")
    win = sqrt_hann(window_len)

    pad, padded_len, frame_idx = _framing(len(x), window_len, hop)
    z = np.zeros(padded_len)
    z[: len(x) + 2 * pad] = x[_reflect_pad_indices(len(x), pad)]
    frames = z[frame_idx] * win
    return Spectrogram(
        bins=np.fft.rfft(frames, axis=1), window_len=window_len, hop=hop, window=window
    )


def istft(spec: Spectrogram, length: int) -> np.ndarray:
    """Weighted overlap-add inverse; output truncated/zero-padded to ``length``.

    Raises:
        ConfigurationError: if the window/hop pair does not satisfy COLA over
            the reconstructed region.
    """
    w, hop = spec.window_len, spec.hop
    win = sqrt_hann(w)
    pad = w // 2
    num_frames = spec.num_frames
    padded_len = (num_frames - 1) * hop + w
    starts = np.arange(num_frames) * hop
    frame_idx = starts[:, None] + np.arange(w)[None, :]

    frames = np.fft.irfft(spec.bins, n=w, axis=1) * win
    out = np.zeros(padded_len)
    weight = np.zeros(padded_len)
    np.add.at(out, frame_idx, frames)
    np.add.at(weight, frame_idx, (win * win)[None, :].repeat(num_frames, axis=0))

    lo, hi = pad, min(pad + length, padded_len)
    region = weight[lo:hi]
    if region.size:
        ref = np.max(region)
        if ref <= 0 or np.max(np.abs(region - ref)) > 1e-8 * ref:
            raise ConfigurationError(
                f"window/hop pair ({w}, {hop}) does not satisfy COLA over the signal"
            )
    y = np.zeros(length)
    y[: hi - lo] = out[lo:hi] / weight[lo:hi]
    return y


def stft_adjoint(
    bin_grad: np.ndarray, length: int, window_len: int = 510, hop: int = 255
) -> np.ndarray:
    """Adjoint of the linear map samples -> complex STFT bins.

    For real signals x and complex cotangents G (same shape as stft(x).bins),
    satisfies <stft(x), G>_R = <x, stft_adjoint(G)> where <A, B>_R is the real
    inner product sum(Re(conj(A) * B)). Used to backpropagate spectral losses.
    """
    w = window_len
    win = sqrt_hann(w)
    pad, padded_len, frame_idx = _framing(length, w, hop)
    if bin_grad.shape != (frame_idx.shape[0], w // 2 + 1):
        raise DimensionError(
            f"bin gradient shape {bin_grad.shape} does not match framing "
            f"({frame_idx.shape[0]}, {w // 2 + 1})"
        )
    # Adjoint of rfft: halve interior bins, inverse transform, scale by w.
    g = np.array(bin_grad, dtype=np.complex128)
    g[:, 1:-1] *= 0.5
    frames = np.fft.irfft(g, n=w, axis=1) * w * win

    gz = np.zeros(padded_len)
    np.add.at(gz, frame_idx, frames)
    gx = np.zeros(length)
    np.add.at(gx, _reflect_pad_indices(length, pad), gz[: length + 2 * pad])
    return gx


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample(samples: np.ndarray, rate_in: int, rate_out: int, taps: int = 32) -> np.ndarray:
    """Windowed-sinc resampling (Hann-windowed kernel, ``taps`` zero crossings)."""
    x = np.asarray(samples, dtype=np.float64)
    if rate_in == rate_out:
        return x.copy()
    if rate_in <= 0 or rate_out <= 0:
        raise ConfigurationError(f"rates must be positive, got {rate_in} -> {rate_out}")

    n_in = len(x)
    n_out = int(round(n_in * rate_out / rate_in))
    cutoff = min(1.0, rate_out / rate_in)  # relative to the input Nyquist
    half = taps / cutoff  # widen support when lowpassing

    t = np.arange(n_out) * (rate_in / rate_out)  # output positions on the input grid
    k0 = np.floor(t - half).astype(np.int64) + 1
    offsets = np.arange(int(2 * half))
    k = k0[:, None] + offsets[None, :]
    tau = t[:, None] - k

    kernel = cutoff * np.sinc(cutoff * tau) * (0.5 + 0.5 * np.cos(np.pi * tau / half))
    kernel /= kernel.sum(axis=1, keepdims=True)

    xpad = np.concatenate([np.zeros(len(offsets)), x, np.zeros(len(offsets))])
    return np.einsum("ij,ij->i", kernel, xpad[k + len(offsets)])


# ---------------------------------------------------------------------------
# WAV (RIFF) I/O
# ---------------------------------------------------------------------------

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def read_wav(path, rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read a PCM-16 or float-32 WAV file, downmixing to mono.

    When ``rate`` is given and differs from the file's rate, the signal is
    resampled with the windowed-sinc kernel. ``rate=None`` keeps the native
    rate.

    Raises:
        IngestionError: malformed header or unsupported codec, with the byte
            offset of the offending field.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise IngestionError(f"{path}: not a RIFF file (byte offset 0)")
    if data[8:12] != b"WAVE":
        raise IngestionError(f"{path}: missing WAVE tag (byte offset 8)")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            raise IngestionError(f"{path}: chunk {cid!r} overruns file (byte offset {pos})")
        if cid == b"fmt ":
            if size < 16:
                raise IngestionError(f"{path}: fmt chunk too short (byte offset {pos})")
            fmt = struct.unpack_from("<HHIIHH", data, body)
            if fmt[0] == _FMT_EXTENSIBLE and size >= 40:
                (subformat,) = struct.unpack_from("<H", data, body + 24)
                fmt = (subformat,) + fmt[1:]
        elif cid == b"data":
            payload = (body, size)
        pos = body + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise IngestionError(f"{path}: no fmt chunk found")
    if payload is None:
        raise IngestionError(f"{path}: no data chunk found")
    audio_format, channels, file_rate, _, _, bits = fmt
    body, size = payload
    raw = data[body : body + size]

    if audio_format == _FMT_PCM and bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise IngestionError(
            f"{path}: unsupported codec (format={audio_format}, bits={bits}, "
            f"byte offset {body - 8})"
        )
    if channels < 1:
        raise IngestionError(f"{path}: invalid channel count {channels}")
    if channels > 1:
        x = x[: len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)

    if rate is not None and file_rate != rate:
        x = resample(x, file_rate, rate)
        file_rate = rate
    return Waveform(samples=x, rate=file_rate)


def write_wav(path, w: Waveform, encoding: str = "float32") -> None:
    """Write a mono WAV file; float-32 encoding round-trips losslessly."""
    x = w.samples
    if encoding == "float32":
        body = x.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHH", _FMT_FLOAT, 1, w.rate, w.rate * 4, 4, 32)
        fact = b"fact" + struct.pack("<II", 4, len(x))
    elif encoding == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        body = q.tobytes()
        fmt = struct.pack("<HHIIHH", _FMT_PCM, 1, w.rate, w.rate * 2, 2, 16)
        fact = b""
    else:
        raise ConfigurationError(f"unknown encoding {encoding!r}")

    chunks = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + fact
    chunks += b"data" + struct.pack("<I", len(body)) + body
    if len(body) % 2:
        chunks += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(chunks)) + chunks)


# ---------------------------------------------------------------------------
# Waveform helpers
# ---------------------------------------------------------------------------


def crop_or_pad(samples: np.ndarray, length: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) >= length:
        return x[:length].copy()
    return np.concatenate([x, np.zeros(length - len(x))])


def rms_db(samples: np.ndarray) -> float:
    r = float(np.sqrt(np.mean(np.square(samples))))
    if r <= 0.0:
        raise IngestionError("RMS of an all-zero signal is undefined")
    return 20.0 * math.log10(r)


def scale_to_rms_db(samples: np.ndarray, target_db: float) -> np.ndarray:
    """Rescale so the full-length RMS equals 10**(target_db/20)."""
    x = np.asarray(samples, dtype=np.float64)
    current = float(np.sqrt(np.mean(np.square(x))))
    if current <= 0.0:
        raise IngestionError("cannot scale a silent source to a target RMS")
    return x * (10.0 ** (target_db / 20.0) / current)


# ---------------------------------------------------------------------------
# Synthetic source families
# ---------------------------------------------------------------------------


def harmonic_tone(
    length: int,
    rate: int,
    rng: np.random.Generator,
    f0_range: tuple[float, float] = (150.0, 300.0),
    partials: int = 4,
    band_max: float | None = 900.0,
) -> np.ndarray:
    """Decaying-partial harmonic tone with random f0 and phases (low band)."""
    f0 = rng.uniform(*f0_range)
    t = np.arange(length) / rate
    x = np.zeros(length)
    for h in range(1, partials + 1):
        f = f0 * h
        if band_max is not None and f > band_max:
            break
        amp = 1.0 / h
        x += amp * np.sin(2.0 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
    # Smooth attack/decay so clips start and end quietly.
    attack = max(4, length // 16)
    env = np.ones(length)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(attack) / attack)
    env[:attack] = ramp
    env[-attack:] = ramp[::-1]
    x *= env
    return x / np.max(np.abs(x))


def band_noise_burst(
    length: int,
    rate: int,
    rng: np.random.Generator,
    band: tuple[float, float] = (1600.0, 3200.0),
) -> np.ndarray:
    """Band-limited noise with a random temporal burst envelope (high band)."""
    noise = rng.standard_normal(length)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(length, d=1.0 / rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    x = np.fft.irfft(spec, n=length)

    burst_len = int(length * rng.uniform(0.4, 0.8))
    start = rng.integers(0, length - burst_len + 1)
    env = np.zeros(length)
    n = np.arange(burst_len)
    env[start : start + burst_len] = np.sin(np.pi * (n + 0.5) / burst_len) ** 2
    x *= env
    return x / np.max(np.abs(x))


def chirp(
    length: int,
    rate: int,
    rng: np.random.Generator,
    f_range: tuple[float, float] = (400.0, 1200.0),
) -> np.ndarray:
    """Linear chirp sweeping a random sub-interval of ``f_range``."""
    f_lo = rng.uniform(f_range[0], 0.5 * (f_range[0] + f_range[1]))
    f_hi = rng.uniform(0.5 * (f_range[0] + f_range[1]), f_range[1])
    t = np.arange(length) / rate
    phase = 2.0 * np.pi * (f_lo * t + 0.5 * (f_hi - f_lo) / t[-1] * t * t)
    x = np.sin(phase + rng.uniform(0.0, 2.0 * np.pi))
    return x / np.max(np.abs(x))


_SYNTH_FAMILIES = {
    "harmonic_tone": harmonic_tone,
    "band_noise_burst": band_noise_burst,
    "chirp": chirp,
}


def synthesize_source(recipe: dict, length: int, rate: int) -> np.ndarray:
    """Render one synthetic source from a manifest recipe.

    The recipe must carry ``kind`` (family name) and ``seed``; remaining keys
    are forwarded to the family function.
    """
    recipe = dict(recipe)
    kind = recipe.pop("kind", None)
    if kind not in _SYNTH_FAMILIES:
        raise SchemaError(f"unknown synth family {kind!r}")
    if "seed" not in recipe:
        raise SchemaError(f"synth recipe for {kind!r} missing a seed")
    rng = np.random.default_rng(int(recipe.pop("seed")))
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in recipe.items()}
    return _SYNTH_FAMILIES[kind](length, rate, rng, **kwargs)


# ---------------------------------------------------------------------------
# Mixtures
# ---------------------------------------------------------------------------


@dataclass
class MixtureSpec:
    """Recipe for one mixture: per-source ingredients plus levels and offsets.

    Each source entry is a dict with either ``file`` (WAV path) or ``synth``
    (recipe dict), plus ``rms_db`` and ``offset_samples``.
    """

    sources: list
    rate: int = SAMPLE_RATE
    duration: float = CLIP_SECONDS
    seed: int = 0

    @property
    def length(self) -> int:
        return int(round(self.rate * self.duration))


def _prepare_source(entry: dict, length: int, rate: int) -> np.ndarray:
    if "file" in entry:
        x = read_wav(entry["file"], rate=rate).samples
    elif "synth" in entry:
        x = synthesize_source(entry["synth"], length, rate)
    else:
        raise SchemaError(f"source entry needs 'file' or 'synth': {entry}")
    x = crop_or_pad(x, length)

    offset = int(entry.get("offset_samples", 0))
    if not 0 <= offset < length:
        raise SchemaError(f"offset_samples {offset} outside [0, {length})")
    if offset:
        shifted = np.zeros(length)
        shifted[offset:] = x[: length - offset]
        x = shifted

    if "rms_db" in entry:
        x = scale_to_rms_db(x, float(entry["rms_db"]))
    return x


def make_mixture(spec: MixtureSpec) -> tuple[Waveform, list[Waveform]]:
    """Render the mixture and its references; the mixture is their exact sum."""
    if not spec.sources:
        raise SchemaError("mixture spec has no sources")
    refs = [_prepare_source(e, spec.length, spec.rate) for e in spec.sources]
    y = np.zeros(spec.length)
    for r in refs:
        y += r
    return Waveform(y, spec.rate), [Waveform(r, spec.rate) for r in refs]


def load_manifest(path) -> list[tuple[str, MixtureSpec]]:
    """Parse a JSON mixture manifest into (id, MixtureSpec) pairs."""
    with open(path) as f:
        doc = json.load(f)
    try:
        rate = int(doc.get("rate", SAMPLE_RATE))
        duration = float(doc.get("duration", CLIP_SECONDS))
        seed = int(doc.get("seed", 0))
        specs = []
        for i, m in enumerate(doc["mixtures"]):
            spec = MixtureSpec(
                sources=list(m["sources"]), rate=rate, duration=duration, seed=seed
            )
            specs.append((str(m.get("id", f"{i:04d}")), spec))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed mixture manifest ({exc})") from exc
    if not specs:
        raise SchemaError(f"{path}: manifest lists no mixtures")
    return specs
