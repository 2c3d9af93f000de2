"""Temporal scoring network: forward pass and exact hand-derived backward.

Pipeline per video: temporal conv -> GELU -> global gated modulation ->
temporal conv -> GELU -> pointwise projection -> per-video normalization.
All math runs in float64; inputs are cast on entry.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .embeddings_io import EmbeddingSequence
from .errors import FormatError, IoError, ShapeError, StateError

LFSP_MAGIC = b"LFSP"
LFSP_VERSION = 1

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return x * ndtr(x)


def gelu_grad(x):
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def normalize_logits(s: np.ndarray, eps: float) -> tuple[np.ndarray, float, float]:
    """Per-video normalization (s - mu) / sqrt(var + eps), population variance.

    Returns (s_hat, mu, var). N=1 yields [0] regardless of the logit value.
    """
    s = np.asarray(s, dtype=np.float64)
    mu = float(s.mean())
    var = float(((s - mu) ** 2).mean())
    return (s - mu) / np.sqrt(var + eps), mu, var


@dataclass
class TSNetConfig:
    dim: int
    hidden: int = 256
    k1: int = 5
    k2: int = 3
    alpha: float = 1.0
    mlp_hidden: int = 0  # 0 -> hidden // 4
    eps: float = 1e-5
    use_gating: bool = True
    use_norm: bool = True
    mlp_bottleneck_gelu: bool = True

    def __post_init__(self):
        if self.mlp_hidden <= 0:
            self.mlp_hidden = max(1, self.hidden // 4)
        if self.k1 % 2 == 0 or self.k2 % 2 == 0:
            raise ShapeError("kernel widths must be odd for symmetric same-padding")
        if self.hidden < 1 or self.dim < 1:
            raise ShapeError("hidden and dim must be positive")
        if self.eps <= 0:
            raise ShapeError("eps must be positive")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "hidden": self.hidden, "k1": self.k1, "k2": self.k2,
            "alpha": self.alpha, "mlp_hidden": self.mlp_hidden, "eps": self.eps,
            "use_gating": self.use_gating, "use_norm": self.use_norm,
            "mlp_bottleneck_gelu": self.mlp_bottleneck_gelu,
        }


# parameter blocks in checkpoint order
PARAM_NAMES = ("conv1_w", "conv1_b", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
               "conv2_w", "conv2_b", "proj_w", "proj_b")


@dataclass
class TSNetParams:
    conv1_w: np.ndarray  # (hidden, dim, k1)
    conv1_b: np.ndarray  # (hidden,)
    mlp_w1: np.ndarray   # (mlp_hidden, hidden)
    mlp_b1: np.ndarray   # (mlp_hidden,)
    mlp_w2: np.ndarray   # (hidden, mlp_hidden)
    mlp_b2: np.ndarray   # (hidden,)
    conv2_w: np.ndarray  # (hidden, hidden, k2)
    conv2_b: np.ndarray  # (hidden,)
    proj_w: np.ndarray   # (hidden,)
    proj_b: np.ndarray   # (1,)

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def copy(self) -> "TSNetParams":
        return TSNetParams(**{name: getattr(self, name).copy() for name in PARAM_NAMES})

    def zeros_like(self) -> "TSNetParams":
        return TSNetParams(**{name: np.zeros_like(getattr(self, name)) for name in PARAM_NAMES})


def tsnet_init(config: TSNetConfig, seed: int) -> TSNetParams:
    """Seeded initialization; gate multiplier is exactly 1 at init because the
    final gating-MLP layer is zero-initialized."""
    rng = np.random.default_rng(seed)

    def unif(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    h, d = config.hidden, config.dim
    mh = config.mlp_hidden
    return TSNetParams(
        conv1_w=unif((h, d, config.k1), d * config.k1),
        conv1_b=np.zeros(h),
        mlp_w1=unif((mh, h), h),
        mlp_b1=np.zeros(mh),
        mlp_w2=np.zeros((h, mh)),  # zero final layer -> tanh(MLP(g)) == 0 at init
        mlp_b2=np.zeros(h),
        conv2_w=unif((h, h, config.k2), h * config.k2),
        conv2_b=np.zeros(h),
        proj_w=unif((h,), h),
        proj_b=np.zeros(1),
    )


def _conv1d(U, W, b):
    """Same-padded 1-D convolution. U: (C_in, N), W: (C_out, C_in, k)."""
    k = W.shape[2]
    p = (k - 1) // 2
    Up = np.pad(U, ((0, 0), (p, p)))
    win = sliding_window_view(Up, k, axis=1)  # (C_in, N, k), win[i,t,j] = Up[i,t+j]
    return np.einsum("oik,itk->ot", W, win, optimize=True) + b[:, None]


def _conv1d_backward(U, W, dA):
    """Gradients of _conv1d wrt input, weights, bias."""
    k = W.shape[2]
    p = (k - 1) // 2
    n = U.shape[1]
    Up = np.pad(U, ((0, 0), (p, p)))
    win = sliding_window_view(Up, k, axis=1)
    dW = np.einsum("ot,itk->oik", dA, win, optimize=True)
    db = dA.sum(axis=1)
    dUp = np.zeros_like(Up)
    for j in range(k):
        dUp[:, j:j + n] += np.einsum("oi,ot->it", W[:, :, j], dA, optimize=True)
    return dUp[:, p:p + n], dW, db


@dataclass
class ForwardCache:
    """Intermediates needed by tsnet_backward."""

    x_t: np.ndarray       # (dim, N) input, transposed, float64
    a1: np.ndarray        # conv1 pre-activation
    h1: np.ndarray        # gelu(a1)
    g: np.ndarray         # channel means of h1
    mlp_pre: np.ndarray   # bottleneck pre-activation
    mlp_hid: np.ndarray   # bottleneck output
    mlp_out: np.ndarray   # final MLP output m
    gate: np.ndarray      # 1 + alpha * tanh(m)
    h1_gated: np.ndarray
    a2: np.ndarray        # conv2 pre-activation
    h2: np.ndarray        # gelu(a2)
    s: np.ndarray         # raw logits
    mu: float
    var: float
    params_ref: object = field(repr=False, default=None)


def tsnet_forward(params: TSNetParams, config: TSNetConfig, x: EmbeddingSequence):
    """Score every frame; returns (s, s_hat, cache)."""
    if x.dim != config.dim:
        raise ShapeError(f"embedding dim {x.dim} != config dim {config.dim}")
    n = x.n_frames
    x_t = np.ascontiguousarray(x.data.T, dtype=np.float64)  # (dim, N)

    a1 = _conv1d(x_t, params.conv1_w, params.conv1_b)
    h1 = gelu(a1)

    if config.use_gating:
        g = h1.mean(axis=1)
        mlp_pre = params.mlp_w1 @ g + params.mlp_b1
        mlp_hid = gelu(mlp_pre) if config.mlp_bottleneck_gelu else mlp_pre
        mlp_out = params.mlp_w2 @ mlp_hid + params.mlp_b2
        gate = 1.0 + config.alpha * np.tanh(mlp_out)
        h1_gated = h1 * gate[:, None]
    else:
        g = np.zeros(config.hidden)
        mlp_pre = np.zeros(config.mlp_hidden)
        mlp_hid = np.zeros(config.mlp_hidden)
        mlp_out = np.zeros(config.hidden)
        gate = np.ones(config.hidden)
        h1_gated = h1

    a2 = _conv1d(h1_gated, params.conv2_w, params.conv2_b)
    h2 = gelu(a2)
    s = params.proj_w @ h2 + params.proj_b[0]

    if config.use_norm:
        s_hat, mu, var = normalize_logits(s, config.eps)
    else:
        mu, var = 0.0, 1.0
        s_hat = s.copy()

    cache = ForwardCache(x_t, a1, h1, g, mlp_pre, mlp_hid, mlp_out, gate,
                         h1_gated, a2, h2, s, mu, var, params_ref=params)
    assert s_hat.shape == (n,)
    return s, s_hat, cache


def tsnet_backward(params: TSNetParams, config: TSNetConfig, cache: ForwardCache,
                   grad_s_hat: np.ndarray):
    """Exact gradients of L = sum_t grad_s_hat[t] * s_hat(t).

    Returns (param_grads: TSNetParams, grad_x: (N, dim)).
    """
    if cache.params_ref is not params:
        raise StateError("cache was produced by different parameters")
    n = cache.s.shape[0]
    grad_s_hat = np.asarray(grad_s_hat, dtype=np.float64)
    if grad_s_hat.shape != (n,):
        raise ShapeError(f"grad_s_hat shape {grad_s_hat.shape} != ({n},)")

    if config.use_norm:
        r = np.sqrt(cache.var + config.eps)
        s_hat = (cache.s - cache.mu) / r
        # layer-norm Jacobian: couple through mean and variance
        ds = (grad_s_hat - grad_s_hat.mean() - s_hat * (grad_s_hat * s_hat).mean()) / r
    else:
        ds = grad_s_hat

    d_proj_w = cache.h2 @ ds
    d_proj_b = np.array([ds.sum()])
    d_h2 = np.outer(params.proj_w, ds)

    d_a2 = d_h2 * gelu_grad(cache.a2)
    d_h1_gated, d_conv2_w, d_conv2_b = _conv1d_backward(cache.h1_gated, params.conv2_w, d_a2)

    if config.use_gating:
        d_h1 = d_h1_gated * cache.gate[:, None]
        d_gate = (d_h1_gated * cache.h1).sum(axis=1)
        d_mlp_out = config.alpha * (1.0 - np.tanh(cache.mlp_out) ** 2) * d_gate
        d_mlp_w2 = np.outer(d_mlp_out, cache.mlp_hid)
        d_mlp_b2 = d_mlp_out
        d_hid = params.mlp_w2.T @ d_mlp_out
        d_pre = d_hid * gelu_grad(cache.mlp_pre) if config.mlp_bottleneck_gelu else d_hid
        d_mlp_w1 = np.outer(d_pre, cache.g)
        d_mlp_b1 = d_pre
        d_g = params.mlp_w1.T @ d_pre
        d_h1 = d_h1 + d_g[:, None] / n
    else:
        d_h1 = d_h1_gated
        d_mlp_w1 = np.zeros_like(params.mlp_w1)
        d_mlp_b1 = np.zeros_like(params.mlp_b1)
        d_mlp_w2 = np.zeros_like(params.mlp_w2)
        d_mlp_b2 = np.zeros_like(params.mlp_b2)

    d_a1 = d_h1 * gelu_grad(cache.a1)
    d_x_t, d_conv1_w, d_conv1_b = _conv1d_backward(cache.x_t, params.conv1_w, d_a1)

    grads = TSNetParams(
        conv1_w=d_conv1_w, conv1_b=d_conv1_b,
        mlp_w1=d_mlp_w1, mlp_b1=d_mlp_b1, mlp_w2=d_mlp_w2, mlp_b2=d_mlp_b2,
        conv2_w=d_conv2_w, conv2_b=d_conv2_b,
        proj_w=d_proj_w, proj_b=d_proj_b,
    )
    return grads, d_x_t.T


def save_checkpoint(params: TSNetParams, config: TSNetConfig, path) -> None:
    """LFSP format: magic, version u16, reserved u16, config JSON (u32 length
    prefix), then parameter arrays in PARAM_NAMES order, float64 little-endian."""
    cfg_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(struct.pack("<4sHHI", LFSP_MAGIC, LFSP_VERSION, 0, len(cfg_bytes)))
            f.write(cfg_bytes)
            for _, arr in params.items():
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_checkpoint(path) -> tuple[TSNetParams, TSNetConfig]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < 12:
        raise FormatError(f"{path}: file shorter than LFSP header")
    magic, version, _reserved, cfg_len = struct.unpack_from("<4sHHI", raw, 0)
    if magic != LFSP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LFSP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    if len(raw) < off + cfg_len:
        raise FormatError(f"{path}: truncated config block")
    config = TSNetConfig(**json.loads(raw[off:off + cfg_len].decode("utf-8")))
    off += cfg_len

    template = tsnet_init(config, seed=0)
    arrays = {}
    for name, ref in template.items():
        count = ref.size
        nbytes = count * 8
        if len(raw) < off + nbytes:
            raise FormatError(f"{path}: truncated parameter block {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off) \
            .astype(np.float64).reshape(ref.shape)
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return TSNetParams(**arrays), config
