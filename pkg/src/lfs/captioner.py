"""Frozen-captioner oracle contract, feature fusion, and the toy captioner.

The oracle maps (fused visual feature, prompt tokens, caption tokens) to a
teacher-forced caption loss and its exact gradient with respect to the fused
feature. Oracle parameters are frozen; nothing in this package mutates them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .embeddings_io import BOS_TOKEN, CaptionRecord, token_center_patterns
from .errors import DataError, FormatError, IoError, OracleError, ShapeError

LFSC_MAGIC = b"LFSC"
LFSC_VERSION = 1


class CaptionerOracle(Protocol):
    vocab_size: int
    feature_dim: int

    def caption_loss(self, fused: np.ndarray, record: CaptionRecord
                     ) -> tuple[float, np.ndarray]:
        """Return (loss, d loss / d fused)."""
        ...


@dataclass
class FusedFeature:
    value: np.ndarray     # (D,) weighted sum of per-frame features
    features: np.ndarray  # (T, D) the frame features that were fused


def fuse_features(features: np.ndarray, w: np.ndarray) -> FusedFeature:
    """Weighted sum F_fused = sum_t w_t F_t; w must sum to 1."""
    features = np.asarray(features, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if features.ndim != 2 or w.ndim != 1 or features.shape[0] != w.shape[0]:
        raise ShapeError(f"features {features.shape} vs weights {w.shape}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise DataError(f"weights sum to {w.sum()}, expected 1")
    return FusedFeature(w @ features, features)


def fuse_features_vjp(fused: FusedFeature, grad_value: np.ndarray) -> np.ndarray:
    """Gradient of the fused vector wrt the weights: row dot products."""
    return fused.features @ np.asarray(grad_value, dtype=np.float64)


class ToyCaptioner:
    """Visual-bias bigram captioner with frozen parameters.

    Per-position logits are visual_readout @ fused + bigram[prev] + bias,
    where prev runs across BOS + prompt + caption. Loss is the summed
    cross-entropy over caption positions only.

    The seeded constructor aligns visual_readout rows with the synthetic
    cluster-center directions of the same (dim, vocab) so that which frames
    are fused genuinely changes which event tokens become likely.
    """

    def __init__(self, visual_readout: np.ndarray, bigram: np.ndarray, bias: np.ndarray):
        visual_readout = np.array(visual_readout, dtype=np.float64)
        bigram = np.array(bigram, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64)
        v = bias.shape[0]
        if visual_readout.shape[0] != v or bigram.shape != (v, v):
            raise ShapeError("inconsistent captioner parameter shapes")
        if not (np.all(np.isfinite(visual_readout)) and np.all(np.isfinite(bigram))
                and np.all(np.isfinite(bias))):
            raise DataError("captioner parameters must be finite")
        self.visual_readout = visual_readout
        self.bigram = bigram
        self.bias = bias
        self.vocab_size = v
        self.feature_dim = visual_readout.shape[1]
        for arr in (self.visual_readout, self.bigram, self.bias):
            arr.flags.writeable = False

    @classmethod
    def seeded(cls, vocab_size: int, dim: int, seed: int,
               readout_scale: float = 1.0, bigram_scale: float = 0.1) -> "ToyCaptioner":
        token_pat, _bg = token_center_patterns(dim, vocab_size)
        # row for token v is the unit direction of v's cluster center;
        # the BOS row 0 stays zero (never predicted as an event token)
        readout = np.zeros((vocab_size, dim))
        norms = np.linalg.norm(token_pat[1:], axis=1, keepdims=True)
        readout[1:] = readout_scale * token_pat[1:] / norms
        rng = np.random.default_rng(seed)
        bigram = bigram_scale * rng.standard_normal((vocab_size, vocab_size))
        return cls(readout, bigram, np.zeros(vocab_size))

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for arr in (self.visual_readout, self.bigram, self.bias):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def caption_loss(self, fused: np.ndarray, record: CaptionRecord
                     ) -> tuple[float, np.ndarray]:
        """Masked caption cross-entropy and its gradient wrt the fused feature."""
        fused = np.asarray(fused, dtype=np.float64)
        if fused.shape != (self.feature_dim,):
            raise ShapeError(f"fused feature shape {fused.shape} != ({self.feature_dim},)")
        if not record.caption_tokens:
            raise DataError("caption_tokens is empty")
        if record.vocab_size != self.vocab_size:
            raise DataError(f"record vocab {record.vocab_size} != captioner {self.vocab_size}")

        stream = [BOS_TOKEN] + record.prompt_tokens + record.caption_tokens
        n_caption = len(record.caption_tokens)
        visual_logits = self.visual_readout @ fused  # shared across positions

        loss = 0.0
        grad_fused = np.zeros_like(fused)
        # caption positions are the trailing n_caption entries of the stream
        for pos in range(len(stream) - n_caption, len(stream)):
            prev, target = stream[pos - 1], stream[pos]
            logits = visual_logits + self.bigram[prev] + self.bias
            logits = logits - logits.max()
            log_z = np.log(np.exp(logits).sum())
            loss += log_z - logits[target]
            probs = np.exp(logits - log_z)
            probs[target] -= 1.0
            grad_fused += self.visual_readout.T @ probs
        return float(loss), grad_fused


def fd_gradient_check(oracle: CaptionerOracle, fused: np.ndarray,
                      record: CaptionRecord, h: float = 1e-5) -> float:
    """Max relative error of the oracle's gradient vs central differences."""
    loss, grad = oracle.caption_loss(fused, record)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise OracleError("oracle returned non-finite output")
    worst = 0.0
    for i in range(fused.shape[0]):
        e = np.zeros_like(fused)
        e[i] = h
        lp, _ = oracle.caption_loss(fused + e, record)
        lm, _ = oracle.caption_loss(fused - e, record)
        fd = (lp - lm) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


def verify_oracle(oracle: CaptionerOracle, trials: int = 5, seed: int = 0,
                  tol: float = 1e-4) -> dict:
    """Finite-difference audit of an oracle on random fused features."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        fused = rng.standard_normal(oracle.feature_dim)
        n_cap = int(rng.integers(1, 5))
        caption = rng.integers(1, oracle.vocab_size, size=n_cap).tolist()
        prompt = rng.integers(0, oracle.vocab_size, size=int(rng.integers(0, 3))).tolist()
        record = CaptionRecord("audit", prompt, caption, oracle.vocab_size)
        worst = max(worst, fd_gradient_check(oracle, fused, record))
    return {"trials": trials, "max_rel_error": worst, "passed": worst < tol}


def save_toy_captioner(cap: ToyCaptioner, path) -> None:
    """LFSC format: magic, version u16, reserved u16, V u32, D u32, then
    visual_readout, bigram, bias as float64 little-endian."""
    try:
        with open(path, "wb") as f:
            f.write(struct.pack("<4sHHII", LFSC_MAGIC, LFSC_VERSION, 0,
                                cap.vocab_size, cap.feature_dim))
            for arr in (cap.visual_readout, cap.bigram, cap.bias):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_toy_captioner(path) -> ToyCaptioner:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < 16:
        raise FormatError(f"{path}: file shorter than LFSC header")
    magic, version, _res, v, d = struct.unpack_from("<4sHHII", raw, 0)
    if magic != LFSC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LFSC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 16
    shapes = [(v, d), (v, v), (v,)]
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        if len(raw) < off + count * 8:
            raise FormatError(f"{path}: truncated parameter block")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                      .astype(np.float64).reshape(shape))
        off += count * 8
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return ToyCaptioner(*arrays)
