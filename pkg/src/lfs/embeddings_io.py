"""Frame-embedding file I/O and the synthetic event-video generator.

Binary layout (LFSE, little-endian):
    magic "LFSE" | version u16 = 1 | reserved u16 = 0 | id_len u32 |
    id bytes (UTF-8) | N u32 | d u32 | N*d float32, row-major.

Caption files are JSON lines with fields
    video_id, prompt_tokens, caption_tokens, vocab_size.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IoError, SpecError

LFSE_MAGIC = b"LFSE"
LFSE_VERSION = 1

# Token id 0 is reserved as the captioner's BOS symbol.
BOS_TOKEN = 0


@dataclass
class EmbeddingSequence:
    """Per-frame embeddings for one video, row t = embedding of frame t."""

    video_id: str
    n_frames: int
    dim: int
    data: np.ndarray  # (n_frames, dim) float32

    def __post_init__(self):
        if self.n_frames < 1 or self.dim < 1:
            raise DataError(f"need n_frames >= 1 and dim >= 1, got {self.n_frames}x{self.dim}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != (self.n_frames, self.dim):
            raise DataError(f"data shape {self.data.shape} != ({self.n_frames}, {self.dim})")
        if not np.all(np.isfinite(self.data)):
            raise DataError("embedding payload contains NaN/Inf")


@dataclass
class CaptionRecord:
    video_id: str
    prompt_tokens: list[int]
    caption_tokens: list[int]
    vocab_size: int

    def __post_init__(self):
        self.prompt_tokens = [int(t) for t in self.prompt_tokens]
        self.caption_tokens = [int(t) for t in self.caption_tokens]
        if self.vocab_size < 1:
            raise DataError("vocab_size must be positive")
        for t in self.prompt_tokens + self.caption_tokens:
            if not 0 <= t < self.vocab_size:
                raise DataError(f"token id {t} out of range [0, {self.vocab_size})")


@dataclass
class SyntheticSpec:
    """Recipe for one synthetic event video."""

    n_frames: int = 256
    dim: int = 64
    n_events: int = 5
    event_len_mean: int = 8
    event_len_jitter: int = 3
    background_noise: float = 0.3
    vocab_size: int = 8
    seed: int = 0

    def validate(self):
        if self.n_frames < 1 or self.dim < 1:
            raise SpecError("n_frames and dim must be positive")
        if self.n_events < 0:
            raise SpecError("n_events must be non-negative")
        if self.n_events > 0 and self.event_len_mean - self.event_len_jitter < 1:
            raise SpecError("event length jitter allows non-positive lengths")
        if self.background_noise < 0:
            raise SpecError("background_noise must be non-negative")
        # token 0 is the reserved BOS id, so only vocab_size - 1 event tokens exist
        if self.n_events > self.vocab_size - 1:
            raise SpecError(f"n_events={self.n_events} needs vocab_size >= {self.n_events + 1}")
        max_total = self.n_events * (self.event_len_mean + self.event_len_jitter)
        if max_total > self.n_frames:
            raise SpecError(f"events cannot fit: {max_total} frames of events > {self.n_frames}")
        if self.dim < self.vocab_size + 1:
            raise SpecError(f"dim={self.dim} too small for {self.vocab_size + 1} cluster blocks")


@dataclass
class SyntheticVideo:
    embeddings: EmbeddingSequence
    caption: CaptionRecord
    events: list[tuple[int, int, int]] = field(default_factory=list)  # (start, end, token)


def write_embeddings(seq: EmbeddingSequence, path) -> None:
    """Serialize an EmbeddingSequence to the LFSE binary format."""
    id_bytes = seq.video_id.encode("utf-8")
    header = struct.pack("<4sHHI", LFSE_MAGIC, LFSE_VERSION, 0, len(id_bytes))
    body = struct.pack("<II", seq.n_frames, seq.dim)
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(id_bytes)
            f.write(body)
            f.write(payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_embeddings(path) -> EmbeddingSequence:
    """Read an LFSE file; inverse of write_embeddings, bit-exact."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < 12:
        raise FormatError(f"{path}: file shorter than LFSE header")
    magic, version, _reserved, id_len = struct.unpack_from("<4sHHI", raw, 0)
    if magic != LFSE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LFSE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    if len(raw) < off + id_len + 8:
        raise FormatError(f"{path}: truncated header")
    video_id = raw[off:off + id_len].decode("utf-8")
    off += id_len
    n_frames, dim = struct.unpack_from("<II", raw, off)
    off += 8
    if n_frames < 1 or dim < 1:
        raise FormatError(f"{path}: invalid dimensions {n_frames}x{dim}")
    expected = n_frames * dim * 4
    if len(raw) - off != expected:
        raise FormatError(f"{path}: payload is {len(raw) - off} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=n_frames * dim, offset=off)
    data = data.astype(np.float32).reshape(n_frames, dim)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: payload contains NaN/Inf")
    return EmbeddingSequence(video_id, n_frames, dim, data)


def write_captions(records, path) -> None:
    try:
        with open(path, "w") as f:
            for r in records:
                f.write(json.dumps({
                    "video_id": r.video_id,
                    "prompt_tokens": r.prompt_tokens,
                    "caption_tokens": r.caption_tokens,
                    "vocab_size": r.vocab_size,
                }) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_captions(path) -> list[CaptionRecord]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    records = []
    for ln in lines:
        if not ln.strip():
            continue
        obj = json.loads(ln)
        records.append(CaptionRecord(obj["video_id"], obj["prompt_tokens"],
                                     obj["caption_tokens"], obj["vocab_size"]))
    return records


def token_center_patterns(dim: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-center sign patterns shared by generator and toy captioner.

    Token v owns disjoint coordinate block v carrying +-1 entries; the
    background owns the final block. Distinct patterns never overlap, so
    pairwise distance is sqrt(2 * block_len) before any amplitude scaling.
    Deterministic in (dim, vocab_size) only.

    Returns (token_patterns: (vocab_size, dim), background_pattern: (dim,)).
    """
    n_blocks = vocab_size + 1
    block_len = dim // n_blocks
    if block_len < 1:
        raise SpecError(f"dim={dim} supports at most {dim - 1} tokens, got vocab {vocab_size}")
    rng = np.random.default_rng([dim, vocab_size, 0x1F5E])
    signs = rng.integers(0, 2, size=(n_blocks, block_len)) * 2 - 1
    patterns = np.zeros((n_blocks, dim))
    for b in range(n_blocks):
        patterns[b, b * block_len:(b + 1) * block_len] = signs[b]
    return patterns[:vocab_size], patterns[vocab_size]


def synth_generate(spec: SyntheticSpec) -> SyntheticVideo:
    """Generate one synthetic event video, deterministic in spec.seed.

    Event frames cluster around their token's center, background frames
    around the background center; centers are separated by at least
    4 * background_noise.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_frames, spec.dim

    token_pat, bg_pat = token_center_patterns(d, spec.vocab_size)
    block_len = d // (spec.vocab_size + 1)
    # min pairwise distance amp * sqrt(2 * block_len) must reach 4 sigma
    amp = max(1.0, 4.0 * spec.background_noise / np.sqrt(2.0 * block_len))

    events: list[tuple[int, int, int]] = []
    if spec.n_events > 0:
        lengths = spec.event_len_mean + rng.integers(
            -spec.event_len_jitter, spec.event_len_jitter + 1, size=spec.n_events)
        total = int(lengths.sum())
        if total > n:
            raise SpecError(f"sampled event lengths need {total} frames > {n}")
        tokens = rng.choice(np.arange(1, spec.vocab_size), size=spec.n_events, replace=False)
        slack = n - total
        gaps = rng.multinomial(slack, np.full(spec.n_events + 1, 1.0 / (spec.n_events + 1)))
        pos = 0
        for i in range(spec.n_events):
            pos += int(gaps[i])
            start, end = pos, pos + int(lengths[i])
            events.append((start, end, int(tokens[i])))
            pos = end

    centers = np.tile(amp * bg_pat, (n, 1))
    for start, end, tok in events:
        centers[start:end] = amp * token_pat[tok]
    data = (centers + spec.background_noise * rng.standard_normal((n, d))).astype(np.float32)

    video_id = f"synth-{spec.seed}"
    seq = EmbeddingSequence(video_id, n, d, data)
    caption = CaptionRecord(video_id, [], [tok for _, _, tok in events], spec.vocab_size)
    return SyntheticVideo(seq, caption, events)


def write_events(videos, path) -> None:
    try:
        with open(path, "w") as f:
            for v in videos:
                f.write(json.dumps({"video_id": v.embeddings.video_id,
                                    "events": [list(e) for e in v.events]}) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_events(path) -> dict[str, list[tuple[int, int, int]]]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    out = {}
    for ln in lines:
        if not ln.strip():
            continue
        obj = json.loads(ln)
        out[obj["video_id"]] = [tuple(e) for e in obj["events"]]
    return out
