"""Small strided 1-D conv denoiser with hand-written reverse-mode gradients.

No autodiff framework: the few primitives (strided conv, its adjoint, SiLU,
linear layers) each carry an explicit backward rule, so both training and
guidance backpropagation run on plain numpy. The transposed convolutions are
implemented literally as the adjoint of the strided convolution, which makes
the Jacobian products exact by construction.

The network predicts the added noise; the score is recovered by the fixed
transform score = -eps_hat / sqrt(1 - alpha_bar[t]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from ..schedule import NoiseSchedule
from .base import ScoreModel

__all__ = ["DenoiserConfig", "DenoiserNet", "ToyDenoiser"]


# ---------------------------------------------------------------------------
# Primitives: strided conv1d, its adjoint, SiLU
# ---------------------------------------------------------------------------


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """x (B, Cin, L), w (Cout, Cin, k) -> (B, Cout, J)."""
    k = w.shape[2]
    win = sliding_window_view(_pad(x, pad), k, axis=2)[:, :, ::stride]  # (B,Cin,J,k)
    return np.tensordot(win, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)


def _conv_bwd_w(gy: np.ndarray, x: np.ndarray, stride: int, pad: int, k: int) -> np.ndarray:
    win = sliding_window_view(_pad(x, pad), k, axis=2)[:, :, ::stride]
    # gy (B,Cout,J), win (B,Cin,J,k) -> (Cout,Cin,k)
    return np.tensordot(gy, win, axes=([0, 2], [0, 2]))


def _conv_bwd_x(gy: np.ndarray, w: np.ndarray, stride: int, pad: int, l_in: int) -> np.ndarray:
    """Adjoint of _conv_fwd with respect to its input: (B,Cout,J) -> (B,Cin,L)."""
    b, _, j = gy.shape
    cin, k = w.shape[1], w.shape[2]
    gxp = np.zeros((b, cin, l_in + 2 * pad))
    for u in range(k):
        contrib = np.tensordot(gy, w[:, :, u], axes=([1], [0]))  # (B,J,Cin)
        gxp[:, :, u : u + j * stride : stride] += contrib.transpose(0, 2, 1)
    return gxp[:, :, pad : pad + l_in]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def _dsilu(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard log-spaced sin/cos step encoding, shape (B, dim)."""
    half = dim // 2
    denom = max(half - 1, 1)
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / denom)
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 16
    kernel: int = 9
    embed_dim: int = 32
    hidden_dim: int = 64

    @property
    def pad(self) -> int:
        return self.kernel // 2


class DenoiserNet:
    """Topology, parameter bookkeeping, and forward/backward passes.

    Encoder (two stride-2 convs) -> middle conv -> decoder (two transposed
    convs) with a skip connection at the half-rate stage. The timestep
    embedding (plus an optional class embedding) is projected per layer and
    added channel-wise.
    """

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), num_classes: int = 0):
        self.config = config
        self.num_classes = num_classes
        c, k, h = config.channels, config.kernel, config.hidden_dim
        self._shapes = {
            "enc1.w": (c, 1, k),
            "enc1.b": (c,),
            "enc2.w": (2 * c, c, k),
            "enc2.b": (2 * c,),
            "mid.w": (2 * c, 2 * c, k),
            "mid.b": (2 * c,),
            "dec1.w": (2 * c, c, k),  # adjoint-conv orientation (in, out, k)
            "dec1.b": (c,),
            "dec2.w": (c, 1, k),
            "dec2.b": (1,),
            "emb.w1": (h, config.embed_dim),
            "emb.b1": (h,),
            "emb.w2": (h, h),
            "emb.b2": (h,),
            "proj1.w": (c, h),
            "proj1.b": (c,),
            "proj2.w": (2 * c, h),
            "proj2.b": (2 * c,),
            "proj3.w": (2 * c, h),
            "proj3.b": (2 * c,),
            "proj4.w": (c, h),
            "proj4.b": (c,),
        }
        if num_classes:
            self._shapes["cls"] = (num_classes, h)
        self.param_names = list(self._shapes)
        self.param_count = sum(int(np.prod(s)) for s in self._shapes.values())

    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for name, shape in self._shapes.items():
            if name.endswith(".b") or name.startswith("proj") or name == "cls":
                params[name] = np.zeros(shape)
            elif name.startswith("emb"):
                params[name] = rng.standard_normal(shape) / np.sqrt(shape[-1])
            else:
                fan_in = shape[1] * shape[2] if name != "dec1.w" else shape[0] * shape[2]
                scale = 1.0 / np.sqrt(fan_in)
                if name == "dec2.w":
                    scale *= 0.01  # near-zero initial output, but gradients still flow
                params[name] = rng.standard_normal(shape) * scale
        return params

    def zeros_like_params(self) -> dict:
        return {name: np.zeros(shape) for name, shape in self._shapes.items()}

    def flatten(self, params: dict) -> np.ndarray:
        return np.concatenate([params[n].ravel() for n in self.param_names])

    def unflatten(self, flat: np.ndarray) -> dict:
        params, pos = {}, 0
        for name in self.param_names:
            shape = self._shapes[name]
            size = int(np.prod(shape))
            params[name] = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        if pos != len(flat):
            raise DimensionError(f"parameter buffer has {len(flat)} values, expected {pos}")
        return params

    # -- forward -----------------------------------------------------------

    def _cond_vectors(self, params, t, labels, batch):
        e = sinusoidal_embedding(np.broadcast_to(np.asarray(t), (batch,)), self.config.embed_dim)
        h1pre = e @ params["emb.w1"].T + params["emb.b1"]
        h1 = _silu(h1pre)
        g = h1 @ params["emb.w2"].T + params["emb.b2"]
        if labels is not None:
            g = g + params["cls"][np.asarray(labels, dtype=np.int64)]
        return e, h1pre, h1, g

    def forward(self, params: dict, x: np.ndarray, t, labels=None, want_cache: bool = False):
        """Noise estimate for x (B, L); L must be divisible by 4."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] % 4 != 0:
            raise DimensionError(f"input must be (batch, L) with L divisible by 4, got {x.shape}")
        b, length = x.shape
        s, p = 2, self.config.pad
        e, h1pre, h1, g = self._cond_vectors(params, t, labels, b)
        proj = [g @ params[f"proj{i}.w"].T + params[f"proj{i}.b"] for i in (1, 2, 3, 4)]

        x0 = x[:, None, :]
        z1 = _conv_fwd(x0, params["enc1.w"], s, p) + params["enc1.b"][:, None] + proj[0][:, :, None]
        a1 = _silu(z1)
        z2 = _conv_fwd(a1, params["enc2.w"], s, p) + params["enc2.b"][:, None] + proj[1][:, :, None]
        a2 = _silu(z2)
        z3 = _conv_fwd(a2, params["mid.w"], 1, p) + params["mid.b"][:, None] + proj[2][:, :, None]
        a3 = _silu(z3)
        z4 = (
            _conv_bwd_x(a3, params["dec1.w"], s, p, length // 2)
            + params["dec1.b"][:, None]
            + proj[3][:, :, None]
            + a1
        )
        a4 = _silu(z4)
        z5 = _conv_bwd_x(a4, params["dec2.w"], s, p, length) + params["dec2.b"][:, None]
        eps = z5[:, 0, :]
        if not want_cache:
            return eps
        cache = dict(
            x0=x0, e=e, h1pre=h1pre, h1=h1, g=g, z1=z1, a1=a1, z2=z2, a2=a2,
            z3=z3, a3=a3, z4=z4, a4=a4, labels=labels, length=length,
        )
        return eps, cache

    # -- backward ----------------------------------------------------------

    def input_vjp(self, params: dict, cache: dict, g_eps: np.ndarray) -> np.ndarray:
        """(d eps / d x)^T g, reusing the forward cache; embeddings are constants."""
        s, p = 2, self.config.pad
        length = cache["length"]
        g5 = np.asarray(g_eps, dtype=np.float64)[:, None, :]
        ga4 = _conv_fwd(g5, params["dec2.w"], s, p)
        g4 = ga4 * _dsilu(cache["z4"])
        ga3 = _conv_fwd(g4, params["dec1.w"], s, p)
        g3 = ga3 * _dsilu(cache["z3"])
        ga2 = _conv_bwd_x(g3, params["mid.w"], 1, p, length // 4)
        g2 = ga2 * _dsilu(cache["z2"])
        ga1 = _conv_bwd_x(g2, params["enc2.w"], s, p, length // 2) + g4  # skip
        g1 = ga1 * _dsilu(cache["z1"])
        return _conv_bwd_x(g1, params["enc1.w"], s, p, length)[:, 0, :]

    def param_grads(self, params: dict, cache: dict, g_eps: np.ndarray) -> dict:
        s, p = 2, self.config.pad
        k = self.config.kernel
        length = cache["length"]
        grads = {}
        g5 = np.asarray(g_eps, dtype=np.float64)[:, None, :]

        grads["dec2.b"] = g5.sum(axis=(0, 2))
        grads["dec2.w"] = _conv_bwd_w(cache["a4"], g5, s, p, k)
        ga4 = _conv_fwd(g5, params["dec2.w"], s, p)
        g4 = ga4 * _dsilu(cache["z4"])

        gproj4 = g4.sum(axis=2)
        grads["dec1.b"] = g4.sum(axis=(0, 2))
        grads["dec1.w"] = _conv_bwd_w(cache["a3"], g4, s, p, k)
        ga3 = _conv_fwd(g4, params["dec1.w"], s, p)
        g3 = ga3 * _dsilu(cache["z3"])

        gproj3 = g3.sum(axis=2)
        grads["mid.b"] = g3.sum(axis=(0, 2))
        grads["mid.w"] = _conv_bwd_w(g3, cache["a2"], 1, p, k)
        ga2 = _conv_bwd_x(g3, params["mid.w"], 1, p, length // 4)
        g2 = ga2 * _dsilu(cache["z2"])

        gproj2 = g2.sum(axis=2)
        grads["enc2.b"] = g2.sum(axis=(0, 2))
        grads["enc2.w"] = _conv_bwd_w(g2, cache["a1"], s, p, k)
        ga1 = _conv_bwd_x(g2, params["enc2.w"], s, p, length // 2) + g4
        g1 = ga1 * _dsilu(cache["z1"])

        gproj1 = g1.sum(axis=2)
        grads["enc1.b"] = g1.sum(axis=(0, 2))
        grads["enc1.w"] = _conv_bwd_w(g1, cache["x0"], s, p, k)

        # Conditioning chain: per-layer projections back to the shared vector.
        g_g = np.zeros_like(cache["g"])
        for i, gp in zip((1, 2, 3, 4), (gproj1, gproj2, gproj3, gproj4)):
            grads[f"proj{i}.w"] = gp.T @ cache["g"]
            grads[f"proj{i}.b"] = gp.sum(axis=0)
            g_g += gp @ params[f"proj{i}.w"]
        if cache["labels"] is not None:
            gcls = np.zeros_like(params["cls"])
            np.add.at(gcls, np.asarray(cache["labels"], dtype=np.int64), g_g)
            grads["cls"] = gcls
        elif "cls" in params:
            grads["cls"] = np.zeros_like(params["cls"])
        grads["emb.w2"] = g_g.T @ cache["h1"]
        grads["emb.b2"] = g_g.sum(axis=0)
        gh1 = g_g @ params["emb.w2"]
        gh1pre = gh1 * _dsilu(cache["h1pre"])
        grads["emb.w1"] = gh1pre.T @ cache["e"]
        grads["emb.b1"] = gh1pre.sum(axis=0)
        return grads


# ---------------------------------------------------------------------------
# Score-model wrapper
# ---------------------------------------------------------------------------


class ToyDenoiser(ScoreModel):
    """Trained denoiser exposed through the score-model interface."""

    kind = "toy-denoiser"
    gradient_modes = frozenset({"backprop", "identity-jacobian", "finite-difference"})

    def __init__(
        self,
        net: DenoiserNet,
        params: dict,
        schedule: NoiseSchedule,
        class_vocab: tuple | None = None,
    ):
        if bool(class_vocab) != bool(net.num_classes):
            raise DimensionError("class_vocab must match the network's class count")
        if class_vocab and len(class_vocab) != net.num_classes:
            raise DimensionError(
                f"{len(class_vocab)} labels for a {net.num_classes}-class network"
            )
        self.net = net
        self.params = params
        self.schedule = schedule
        self.class_vocab = tuple(class_vocab) if class_vocab else None

    def _label_index(self, label):
        if label is None:
            return None
        return np.array([self.class_vocab.index(label)])

    def eps(self, x: np.ndarray, t: int, label=None) -> np.ndarray:
        x = self._check_inputs(x, t, label)
        return self.net.forward(self.params, x[None, :], int(t), self._label_index(label))[0]

    def score(self, x, t, label=None):
        x = self._check_inputs(x, t, label)
        denom = np.sqrt(1.0 - self.schedule.alpha_bar[t])
        return -self.eps(x, t, label) / denom

    def score_with_vjp(self, x, t, label=None):
        x = self._check_inputs(x, t, label)
        denom = np.sqrt(1.0 - self.schedule.alpha_bar[t])
        eps, cache = self.net.forward(
            self.params, x[None, :], int(t), self._label_index(label), want_cache=True
        )

        def vjp(v):
            g = self.net.input_vjp(self.params, cache, np.asarray(v, dtype=np.float64)[None, :])
            return -g[0] / denom

        return -eps[0] / denom, vjp
