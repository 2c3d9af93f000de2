"""Composite training objective, AdamW, temperature annealing, ablation toggles.

Loss per video: relative caption loss + lambda_l1 * ||pre_norm||_1
- lambda_ent * H(p), each term droppable via config toggles. Gradients flow
oracle -> w -> pre_norm -> p -> s_hat -> scoring-network parameters; the
uniform-weight branch is constant and contributes no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .captioner import CaptionerOracle, fuse_features, fuse_features_vjp
from .embeddings_io import CaptionRecord, EmbeddingSequence, SyntheticVideo
from .errors import NumericsError, ParamError
from .selector import (entropy, entropy_grad, soft_distribution,
                       soft_distribution_vjp, truncate_renormalize,
                       truncate_renormalize_vjp)
from .tsnet import TSNetConfig, TSNetParams, tsnet_backward, tsnet_forward, tsnet_init


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 5
    batch_size: int = 1
    tau_start: float = 2.0
    tau_end: float = 1.0
    lambda_l1: float = 0.01
    lambda_ent: float = 0.01
    k_max: int = 16
    m_max: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    lambda_ent_decay: bool = False  # optionally anneal lambda_ent linearly to 0
    # scoring-network architecture
    hidden: int = 256
    k1: int = 5
    k2: int = 3
    # ablation toggles
    stratified: bool = True
    gating: bool = True
    norm: bool = True
    caption_loss: bool = True
    relative_baseline: bool = True
    entropy_reg: bool = True
    l1_reg: bool = True

    def __post_init__(self):
        if not (self.tau_start >= self.tau_end > 0):
            raise ParamError("need tau_start >= tau_end > 0")
        if self.lambda_l1 < 0 or self.lambda_ent < 0:
            raise ParamError("regularizer weights must be non-negative")
        if self.epochs < 1:
            raise ParamError("epochs must be >= 1")

    def tsnet_config(self, dim: int) -> TSNetConfig:
        return TSNetConfig(dim=dim, hidden=self.hidden, k1=self.k1, k2=self.k2,
                           use_gating=self.gating, use_norm=self.norm)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamWState:
    m: TSNetParams
    v: TSNetParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: TSNetParams) -> "AdamWState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


@dataclass
class LossBreakdown:
    cap: float
    cap_uniform: float
    cap_rel: float
    l1: float
    ent: float
    total: float


def anneal_temperature(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear schedule from tau_start (step 0) to tau_end (step == total_steps)."""
    if total_steps < 1:
        raise ParamError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ParamError(f"step {step} outside [0, {total_steps}]")
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * step / total_steps


def _unpack(video) -> tuple[EmbeddingSequence, CaptionRecord]:
    if isinstance(video, SyntheticVideo):
        return video.embeddings, video.caption
    seq, rec = video
    return seq, rec


def compute_loss(params: TSNetParams, video, oracle: CaptionerOracle,
                 cfg: TrainConfig, tau: float, tsnet_cfg: TSNetConfig = None,
                 lambda_ent: float = None, force_uniform_weights: bool = False
                 ) -> tuple[LossBreakdown, TSNetParams]:
    """Evaluate the composite objective on one video and backpropagate it."""
    seq, rec = _unpack(video)
    if tsnet_cfg is None:
        tsnet_cfg = cfg.tsnet_config(seq.dim)
    if lambda_ent is None:
        lambda_ent = cfg.lambda_ent

    _s, s_hat, cache = tsnet_forward(params, tsnet_cfg, seq)
    fld = soft_distribution(s_hat, tau)
    fw = truncate_renormalize(fld.p, cfg.m_max)
    feats = seq.data[fw.candidates].astype(np.float64)

    w_used = fw.w_uni if force_uniform_weights else fw.w
    fused = fuse_features(feats, w_used)
    cap, grad_fused = oracle.caption_loss(fused.value, rec)
    fused_uni = fuse_features(feats, fw.w_uni)
    cap_uniform, _ = oracle.caption_loss(fused_uni.value, rec)
    cap_rel = cap - cap_uniform

    l1 = float(np.abs(fw.pre_norm).sum())
    ent = entropy(fld.p)

    total = 0.0
    grad_p = np.zeros_like(fld.p)
    if cfg.caption_loss:
        total += cap_rel if cfg.relative_baseline else cap
        if not force_uniform_weights:
            grad_w = fuse_features_vjp(fused, grad_fused)
            grad_p[fw.candidates] += truncate_renormalize_vjp(fw, grad_w)
    if cfg.l1_reg:
        total += cfg.lambda_l1 * l1
        grad_p[fw.candidates] += cfg.lambda_l1 * np.sign(fw.pre_norm)
    if cfg.entropy_reg:
        total -= lambda_ent * ent
        grad_p -= lambda_ent * entropy_grad(fld.p)

    grad_s_hat = soft_distribution_vjp(fld, grad_p)
    grads, _grad_x = tsnet_backward(params, tsnet_cfg, cache, grad_s_hat)
    return LossBreakdown(cap, cap_uniform, cap_rel, l1, ent, total), grads


def grad_global_norm(grads: TSNetParams) -> float:
    return float(np.sqrt(sum(float((g ** 2).sum()) for _, g in grads.items())))


def clip_gradients(grads: TSNetParams, max_norm: float) -> tuple[float, bool]:
    """Global-norm clip in place; returns (pre-clip norm, clipped?)."""
    norm = grad_global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for _, g in grads.items():
            g *= scale
        return norm, True
    return norm, False


def adamw_step(params: TSNetParams, grads: TSNetParams, state: AdamWState,
               cfg: TrainConfig) -> tuple[TSNetParams, AdamWState]:
    """One decoupled-weight-decay Adam update, in place."""
    for _, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient; step aborted")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        theta = getattr(params, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= cfg.lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                           + cfg.weight_decay * theta)
    return params, state


def train(corpus, oracle: CaptionerOracle, cfg: TrainConfig,
          epoch_callback=None) -> tuple[TSNetParams, list[dict]]:
    """Seeded multi-epoch training loop, batch size 1.

    On NumericsError the exception carries .last_good_params and .log so
    callers can checkpoint the last good state.
    """
    corpus = list(corpus)
    if not corpus:
        raise ParamError("corpus is empty")
    seq0, _ = _unpack(corpus[0])
    tsnet_cfg = cfg.tsnet_config(seq0.dim)
    params = tsnet_init(tsnet_cfg, cfg.seed)
    state = AdamWState.init(params)
    rng = np.random.default_rng(cfg.seed)

    n = len(corpus)
    total_sched = max(1, cfg.epochs * n - 1)
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for idx in order:
            video = corpus[idx]
            seq, _rec = _unpack(video)
            tau = anneal_temperature(step, total_sched, cfg)
            lam_ent = cfg.lambda_ent
            if cfg.lambda_ent_decay:
                lam_ent = cfg.lambda_ent * (1.0 - step / total_sched)
            breakdown, grads = compute_loss(params, video, oracle, cfg, tau,
                                            tsnet_cfg=tsnet_cfg, lambda_ent=lam_ent)
            norm, clipped = clip_gradients(grads, cfg.clip_norm)
            try:
                adamw_step(params, grads, state, cfg)
            except NumericsError as e:
                e.last_good_params = params
                e.log = log
                raise
            log.append({
                "step": step, "epoch": epoch, "video_id": seq.video_id,
                "tau": tau, "cap": breakdown.cap, "cap_uniform": breakdown.cap_uniform,
                "cap_rel": breakdown.cap_rel, "l1": breakdown.l1, "ent": breakdown.ent,
                "total": breakdown.total, "grad_norm": norm, "clipped": clipped,
            })
            step += 1
        if epoch_callback is not None:
            epoch_callback(epoch, params)
    return params, log
