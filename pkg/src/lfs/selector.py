"""Soft importance distribution, entropy, stratified top-k, frame weights.

Training differentiates through the soft distribution and the
truncate-and-renormalize weights only; stratified_topk is inference-only
and exposes no gradient path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParamError


@dataclass
class ImportanceField:
    s_hat: np.ndarray  # (N,) normalized logits
    tau: float
    p: np.ndarray      # (N,) soft distribution


@dataclass
class SelectionResult:
    indices: list[int]                 # strictly increasing, one per segment
    segments: list[tuple[int, int]]    # half-open, partition [0, N)
    endpoint_retained: tuple[bool, bool]

    def to_json(self, video_id: str, scores=None) -> str:
        obj = {
            "video_id": video_id,
            "k": len(self.indices),
            "indices": self.indices,
            "segments": [list(s) for s in self.segments],
            "scores": list(scores) if scores is not None else None,
        }
        return json.dumps(obj)


@dataclass
class FrameWeights:
    candidates: np.ndarray  # (M,) frame indices, descending p
    pre_norm: np.ndarray    # (M,) p restricted to candidates
    w: np.ndarray           # (M,) renormalized, sums to 1
    w_uni: np.ndarray       # (M,) uniform 1/M


def soft_distribution(s_hat, tau: float) -> ImportanceField:
    """Temperature softmax p(t) = exp(s_hat(t)/tau) / sum_j exp(s_hat(j)/tau)."""
    if tau <= 0:
        raise ParamError(f"temperature must be positive, got {tau}")
    s_hat = np.asarray(s_hat, dtype=np.float64)
    z = s_hat / tau
    z = z - z.max()  # max-subtraction for stability
    e = np.exp(z)
    return ImportanceField(s_hat, float(tau), e / e.sum())


def soft_distribution_vjp(field: ImportanceField, grad_p) -> np.ndarray:
    """Pull a gradient on p back to s_hat through the tempered softmax."""
    grad_p = np.asarray(grad_p, dtype=np.float64)
    p = field.p
    return p * (grad_p - float(grad_p @ p)) / field.tau


def entropy(p) -> float:
    """Shannon entropy -sum p ln p with 0 ln 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DataError("negative probability")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_grad(p) -> np.ndarray:
    """dH/dp_i = -(ln p_i + 1); p is clipped away from 0 for the log."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DataError("negative probability")
    return -(np.log(np.clip(p, 1e-300, None)) + 1.0)


def segment_bounds(n: int, k: int) -> list[int]:
    """K near-equal partition boundaries of [0, n): bound i = round(i*n/k)."""
    return [(2 * i * n + k) // (2 * k) for i in range(k + 1)]


def stratified_topk(s_hat, k: int, retain_endpoints: bool) -> SelectionResult:
    """One argmax per temporal segment; optionally pin the first/last frame."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    n = s_hat.shape[0]
    if k < 1 or k > n:
        raise ParamError(f"need 1 <= K <= N, got K={k}, N={n}")
    bounds = segment_bounds(n, k)
    segments = [(bounds[i], bounds[i + 1]) for i in range(k)]
    indices = [int(lo + np.argmax(s_hat[lo:hi])) for lo, hi in segments]
    retained = (False, False)
    if retain_endpoints and k >= 2:
        indices[0] = 0
        indices[-1] = n - 1
        retained = (True, True)
    return SelectionResult(indices, segments, retained)


def truncate_renormalize(p, m_max: int) -> FrameWeights:
    """Keep the top-min(m_max, N) frames by p and rescale them to sum 1."""
    if m_max < 1:
        raise ParamError(f"m_max must be >= 1, got {m_max}")
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    m = min(m_max, n)
    # descending p, ties broken by lower index
    order = np.lexsort((np.arange(n), -p))
    candidates = order[:m]
    pre_norm = p[candidates]
    total = pre_norm.sum()
    if total <= 0:
        raise DataError("cannot renormalize: candidate mass is zero")
    return FrameWeights(candidates, pre_norm, pre_norm / total, np.full(m, 1.0 / m))


def truncate_renormalize_vjp(weights: FrameWeights, grad_w) -> np.ndarray:
    """Pull a gradient on w back to pre_norm (candidate set held fixed)."""
    grad_w = np.asarray(grad_w, dtype=np.float64)
    total = weights.pre_norm.sum()
    return (grad_w - float(grad_w @ weights.w)) / total
