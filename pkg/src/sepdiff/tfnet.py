"""Reduced-scale forward pass of the triple-path attention U-Net.

Forward only: the trainable desk-scale prior lives in the priors package;
this module exercises the architecture's structure — frame-wise and bin-wise
attention, the frequency-unshuffled global-temporal path, and AdaLN-Zero
conditioning, which makes every block an exact identity at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UnknownLabelError
from .priors.checkpoint import read_flat_checkpoint, write_flat_checkpoint
from .priors.denoiser import sinusoidal_embedding

__all__ = [
    "TfNetConfig",
    "init_tfnet_params",
    "tfnet_param_count",
    "intra_frame_attention",
    "intra_frequency_attention",
    "global_temporal_attention",
    "tfnet_forward",
    "conv_skeleton_forward",
    "save_tfnet_params",
    "load_tfnet_params",
]

_LN_EPS = 1e-6


@dataclass(frozen=True)
class TfNetConfig:
    """Tiny default exercises every code path within milliseconds."""

    channels: int = 8  # C
    freq_bins: int = 32  # F at the input
    frames: int = 24  # T
    subband_factor: int = 4  # frequency unshuffle factor in the latent stage
    reduced_channels: int = 4  # channel width after the latent SwiGLU projection
    heads: int = 2
    embed_dim: int = 16  # attention embedding size
    cond_dim: int = 32  # timestep/class conditioning vector size
    block_layout: tuple = (2, 4, 8, 4, 2)
    class_vocab: tuple | None = None

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if len(self.block_layout) != 5:
            raise ConfigurationError("block_layout must list five stage repetition counts")
        if self.freq_bins % 4 != 0:
            raise ConfigurationError("freq_bins must be divisible by 4 (two downsamples)")
        if self.latent_freq % self.subband_factor != 0:
            raise ConfigurationError(
                f"latent frequency size {self.latent_freq} not divisible by "
                f"subband factor {self.subband_factor}"
            )

    @property
    def latent_freq(self) -> int:
        return self.freq_bins // 4

    @property
    def latent_dim(self) -> int:
        """Feature size of the global-temporal attention sequence."""
        return self.reduced_channels * (self.latent_freq // self.subband_factor)


# ---------------------------------------------------------------------------
# Elementary pieces
# ---------------------------------------------------------------------------


def _silu(z):
    return z / (1.0 + np.exp(-z))


def _layer_norm(x: np.ndarray) -> np.ndarray:
    """Normalize over the channel axis at every (f, t) position, no affine."""
    mu = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS)


def _modulate(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    extra = (1,) * (x.ndim - 1)
    return x * (1.0 + scale.reshape(-1, *extra)) + shift.reshape(-1, *extra)


def _swiglu(x: np.ndarray, w1: np.ndarray, w2: np.ndarray, w3: np.ndarray) -> np.ndarray:
    """Gated linear unit with Swish gate, applied channel-wise: first axis."""
    a = np.tensordot(w1, x, axes=(1, 0))
    b = np.tensordot(w2, x, axes=(1, 0))
    return np.tensordot(w3, _silu(b) * a, axes=(1, 0))


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride_f: int = 1) -> np.ndarray:
    """Conv over (F, T) with symmetric padding derived from the kernel."""
    cout, cin, kf, kt = w.shape
    pf, pt = kf // 2, kt // 2
    xp = np.pad(x, ((0, 0), (pf, pf), (pt, pt)))
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(xp, (kf, kt), axis=(1, 2))[:, ::stride_f]
    # win: (Cin, Fo, To, kf, kt) -> (Cout, Fo, To)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]


def _upsample_freq(x: np.ndarray) -> np.ndarray:
    """Zero-stuff odd frequency rows (stride-2 transposed-conv front half)."""
    c, f, t = x.shape
    out = np.zeros((c, 2 * f, t))
    out[:, ::2] = x
    return out


def _attention(q, k, v, heads):
    """q, k, v: (E, S) with sequence axis last; returns (E, S)."""
    e, s = q.shape
    dh = e // heads
    q = q.reshape(heads, dh, s)
    k = k.reshape(heads, dh, s)
    v = v.reshape(heads, dh, s)
    scores = np.einsum("hdi,hdj->hij", q, k) / np.sqrt(dh)
    scores -= scores.max(axis=2, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=2, keepdims=True)
    out = np.einsum("hij,hdj->hdi", attn, v)
    return out.reshape(e, s)


def _axis_attention(p: np.ndarray, params: dict, prefix: str, cfg: TfNetConfig, axis: int):
    """Multi-head attention over F (axis=1) or T (axis=2), other axis independent."""
    qkv = np.tensordot(params[prefix + "qkv.w"], p, axes=(1, 0)) + params[prefix + "qkv.b"][
        :, None, None
    ]
    e = cfg.embed_dim
    q, k, v = qkv[:e], qkv[e : 2 * e], qkv[2 * e :]
    out = np.empty_like(q)
    other = 2 if axis == 1 else 1
    for j in range(p.shape[other]):
        sl = (slice(None), slice(None), j) if axis == 1 else (slice(None), j, slice(None))
        out[sl] = _attention(q[sl], k[sl], v[sl], cfg.heads)
    return (
        np.tensordot(params[prefix + "out.w"], out, axes=(1, 0))
        + params[prefix + "out.b"][:, None, None]
    )


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


def _dual_unit_block(x, params, prefix, cond, cfg, axis):
    c = x.shape[0]
    mod = params[prefix + "adaln.w"] @ cond + params[prefix + "adaln.b"]
    s1, b1, g1, s2, b2, g2 = mod.reshape(6, c)

    m = _modulate(_layer_norm(x), s1, b1)
    pre = _swiglu(m, params[prefix + "pre.w1"], params[prefix + "pre.w2"], params[prefix + "pre.w3"])
    x = x + g1[:, None, None] * _axis_attention(pre, params, prefix, cfg, axis)

    m2 = _modulate(_layer_norm(x), s2, b2)
    ffn = _swiglu(m2, params[prefix + "ffn.w1"], params[prefix + "ffn.w2"], params[prefix + "ffn.w3"])
    return x + g2[:, None, None] * ffn


def intra_frame_attention(x, params, cond, cfg: TfNetConfig, prefix: str = ""):
    """Attention across frequency bins within each time frame."""
    _check_map(x)
    return _dual_unit_block(x, params, prefix, cond, cfg, axis=1)


def intra_frequency_attention(x, params, cond, cfg: TfNetConfig, prefix: str = ""):
    """Attention across time within each frequency bin."""
    _check_map(x)
    return _dual_unit_block(x, params, prefix, cond, cfg, axis=2)


def _unshuffle_freq(x: np.ndarray, n_f: int) -> np.ndarray:
    c, f, t = x.shape
    return x.reshape(c, f // n_f, n_f, t).transpose(0, 2, 1, 3).reshape(c * n_f, f // n_f, t)


def _shuffle_freq(x: np.ndarray, n_f: int) -> np.ndarray:
    cn, fr, t = x.shape
    c = cn // n_f
    return x.reshape(c, n_f, fr, t).transpose(0, 2, 1, 3).reshape(c, fr * n_f, t)


def global_temporal_attention(x, params, cond, cfg: TfNetConfig, prefix: str = ""):
    """Frequency-unshuffled, channel-suppressed attention over the full time axis."""
    _check_map(x)
    c, f, t = x.shape
    if f % cfg.subband_factor != 0:
        raise ConfigurationError(
            f"frequency size {f} not divisible by subband factor {cfg.subband_factor}"
        )
    mod = params[prefix + "adaln.w"] @ cond + params[prefix + "adaln.b"]
    s1, b1, g1 = mod.reshape(3, c)

    m = _modulate(_layer_norm(x), s1, b1)
    u = _unshuffle_freq(m, cfg.subband_factor)
    proj = _swiglu(
        u, params[prefix + "down.w1"], params[prefix + "down.w2"], params[prefix + "down.w3"]
    )  # (C', F/N_F, T)
    cp, fr, _ = proj.shape
    z = proj.reshape(cp * fr, t)

    qkv = params[prefix + "qkv.w"] @ z + params[prefix + "qkv.b"][:, None]
    e = cfg.embed_dim
    attn = _attention(qkv[:e], qkv[e : 2 * e], qkv[2 * e :], cfg.heads)
    z = params[prefix + "out.w"] @ attn + params[prefix + "out.b"][:, None]

    back = np.tensordot(params[prefix + "up.w"], z.reshape(cp, fr, t), axes=(1, 0))
    back = back + params[prefix + "up.b"][:, None, None]
    restored = _shuffle_freq(back, cfg.subband_factor)
    return x + g1[:, None, None] * restored


def _check_map(x):
    if np.asarray(x).ndim != 3:
        raise DimensionError(f"feature map must be (C, F, T), got shape {np.shape(x)}")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _stage_names(cfg: TfNetConfig):
    """Yield (prefix, block_type) pairs in forward order."""
    for stage, reps in enumerate(cfg.block_layout):
        for r in range(reps):
            yield f"s{stage}.r{r}.frame.", "dual"
            yield f"s{stage}.r{r}.freq.", "dual"
            if stage == 2:
                yield f"s{stage}.r{r}.global.", "global"


def _param_shapes(cfg: TfNetConfig) -> dict:
    c, e = cfg.channels, cfg.embed_dim
    d = cfg.latent_dim
    shapes = {
        "cond.w1": (cfg.cond_dim, cfg.cond_dim),
        "cond.b1": (cfg.cond_dim,),
        "cond.w2": (cfg.cond_dim, cfg.cond_dim),
        "cond.b2": (cfg.cond_dim,),
        "in.w": (c, 2, 3, 3),
        "in.b": (c,),
        "out.w": (2, c, 3, 3),
        "out.b": (2,),
        "down0.w": (c, c, 3, 1),
        "down0.b": (c,),
        "down1.w": (c, c, 3, 1),
        "down1.b": (c,),
        "up1.w": (c, c, 3, 1),
        "up1.b": (c,),
        "up0.w": (c, c, 3, 1),
        "up0.b": (c,),
    }
    if cfg.class_vocab:
        shapes["cls"] = (len(cfg.class_vocab), cfg.cond_dim)
    for prefix, block_type in _stage_names(cfg):
        shapes[prefix + "adaln.w"] = ((6 if block_type == "dual" else 3) * c, cfg.cond_dim)
        shapes[prefix + "adaln.b"] = ((6 if block_type == "dual" else 3) * c,)
        if block_type == "dual":
            shapes[prefix + "pre.w1"] = (c, c)
            shapes[prefix + "pre.w2"] = (c, c)
            shapes[prefix + "pre.w3"] = (c, c)
            shapes[prefix + "qkv.w"] = (3 * e, c)
            shapes[prefix + "qkv.b"] = (3 * e,)
            shapes[prefix + "out.w"] = (c, e)
            shapes[prefix + "out.b"] = (c,)
            shapes[prefix + "ffn.w1"] = (2 * c, c)
            shapes[prefix + "ffn.w2"] = (2 * c, c)
            shapes[prefix + "ffn.w3"] = (c, 2 * c)
        else:
            cp, cn = cfg.reduced_channels, c * cfg.subband_factor
            shapes[prefix + "down.w1"] = (cp, cn)
            shapes[prefix + "down.w2"] = (cp, cn)
            shapes[prefix + "down.w3"] = (cp, cp)
            shapes[prefix + "qkv.w"] = (3 * e, d)
            shapes[prefix + "qkv.b"] = (3 * e,)
            shapes[prefix + "out.w"] = (d, e)
            shapes[prefix + "out.b"] = (d,)
            shapes[prefix + "up.w"] = (cn, cp)
            shapes[prefix + "up.b"] = (cn,)
    return shapes


def init_tfnet_params(cfg: TfNetConfig, seed: int = 0) -> dict:
    """Random parameters with every AdaLN modulation zero-initialized."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if "adaln" in name or name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def tfnet_param_count(cfg: TfNetConfig) -> int:
    return sum(int(np.prod(s)) for s in _param_shapes(cfg).values())


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------


def _cond_vector(params, cfg: TfNetConfig, t: int, label) -> np.ndarray:
    e = sinusoidal_embedding(np.array([t]), cfg.cond_dim)[0]
    h = _silu(params["cond.w1"] @ e + params["cond.b1"])
    cond = params["cond.w2"] @ h + params["cond.b2"]
    if label is not None:
        if not cfg.class_vocab or label not in cfg.class_vocab:
            raise UnknownLabelError(f"unknown class label {label!r}")
        cond = cond + params["cls"][cfg.class_vocab.index(label)]
    return cond


def _run_stage(x, params, cond, cfg, stage, enable_attention):
    if not enable_attention:
        return x
    for r in range(cfg.block_layout[stage]):
        base = f"s{stage}.r{r}."
        x = intra_frame_attention(x, params, cond, cfg, base + "frame.")
        x = intra_frequency_attention(x, params, cond, cfg, base + "freq.")
        if stage == 2:
            x = global_temporal_attention(x, params, cond, cfg, base + "global.")
    return x


def _forward(x, t, label, params, cfg: TfNetConfig, enable_attention: bool):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2, cfg.freq_bins, cfg.frames):
        raise DimensionError(
            f"input shape {x.shape} != (2, {cfg.freq_bins}, {cfg.frames})"
        )
    cond = _cond_vector(params, cfg, t, label)

    h = _conv2d(x, params["in.w"], params["in.b"])
    h = _run_stage(h, params, cond, cfg, 0, enable_attention)
    skip0 = h
    h = _conv2d(h, params["down0.w"], params["down0.b"], stride_f=2)
    h = _run_stage(h, params, cond, cfg, 1, enable_attention)
    skip1 = h
    h = _conv2d(h, params["down1.w"], params["down1.b"], stride_f=2)
    h = _run_stage(h, params, cond, cfg, 2, enable_attention)
    h = _conv2d(_upsample_freq(h), params["up1.w"], params["up1.b"]) + skip1
    h = _run_stage(h, params, cond, cfg, 3, enable_attention)
    h = _conv2d(_upsample_freq(h), params["up0.w"], params["up0.b"]) + skip0
    h = _run_stage(h, params, cond, cfg, 4, enable_attention)
    return _conv2d(h, params["out.w"], params["out.b"])


def tfnet_forward(x, t: int, label, params: dict, cfg: TfNetConfig) -> np.ndarray:
    """Complex noise estimate (as 2 real channels) for a (2, F, T) input."""
    return _forward(x, t, label, params, cfg, enable_attention=True)


def conv_skeleton_forward(x, t: int, label, params: dict, cfg: TfNetConfig) -> np.ndarray:
    """Same pass with every attention block skipped.

    At AdaLN-Zero initialization the full network equals this skeleton
    exactly (all attention blocks pass through).
    """
    return _forward(x, t, label, params, cfg, enable_attention=False)


# ---------------------------------------------------------------------------
# Parameter serialization (same container as the prior checkpoints)
# ---------------------------------------------------------------------------


def save_tfnet_params(path, params: dict, cfg: TfNetConfig) -> None:
    shapes = _param_shapes(cfg)
    flat = np.concatenate([params[n].ravel() for n in shapes])
    header = {
        "kind": "tfnet",
        "channels": cfg.channels,
        "freq_bins": cfg.freq_bins,
        "frames": cfg.frames,
        "subband_factor": cfg.subband_factor,
        "reduced_channels": cfg.reduced_channels,
        "heads": cfg.heads,
        "embed_dim": cfg.embed_dim,
        "cond_dim": cfg.cond_dim,
        "block_layout": list(cfg.block_layout),
        "class_vocab": list(cfg.class_vocab) if cfg.class_vocab else None,
    }
    write_flat_checkpoint(path, header, flat)


def load_tfnet_params(path) -> tuple[dict, TfNetConfig]:
    header, flat = read_flat_checkpoint(path)
    if header.get("kind") != "tfnet":
        raise ConfigurationError(f"{path}: unexpected model kind {header.get('kind')!r}")
    cfg = TfNetConfig(
        channels=header["channels"],
        freq_bins=header["freq_bins"],
        frames=header["frames"],
        subband_factor=header["subband_factor"],
        reduced_channels=header["reduced_channels"],
        heads=header["heads"],
        embed_dim=header["embed_dim"],
        cond_dim=header["cond_dim"],
        block_layout=tuple(header["block_layout"]),
        class_vocab=tuple(header["class_vocab"]) if header.get("class_vocab") else None,
    )
    shapes = _param_shapes(cfg)
    params, pos = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape).copy()
        pos += size
    if pos != len(flat):
        raise ConfigurationError(f"{path}: buffer size mismatch for tfnet topology")
    return params, cfg
