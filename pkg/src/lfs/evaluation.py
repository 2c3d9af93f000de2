"""Selection baselines and desk-scale metrics: event recall and temporal
dispersion, compared across uniform sampling, global top-k, and stratified
selection on synthetic corpora."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .embeddings_io import SyntheticVideo
from .errors import DataError, ParamError
from .selector import stratified_topk
from .tsnet import TSNetConfig, TSNetParams, tsnet_forward

STRATEGIES = ("uniform", "global_topk", "stratified")


def uniform_sample(n: int, k: int) -> list[int]:
    """Endpoint-inclusive evenly spaced indices: round(i*(N-1)/(K-1))."""
    if k < 1 or k > n:
        raise ParamError(f"need 1 <= K <= N, got K={k}, N={n}")
    if k == 1:
        return [0]
    idx = [(2 * i * (n - 1) + (k - 1)) // (2 * (k - 1)) for i in range(k)]
    return sorted(set(idx))


def global_topk(s_hat, k: int) -> list[int]:
    """K highest-scoring frames, ascending output, ties to the lower index."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    n = s_hat.shape[0]
    if k < 1 or k > n:
        raise ParamError(f"need 1 <= K <= N, got K={k}, N={n}")
    order = np.lexsort((np.arange(n), -s_hat))
    return sorted(int(i) for i in order[:k])


def event_recall(indices, events) -> float:
    """Fraction of event intervals containing at least one selected index."""
    if not events:
        return 1.0
    chosen = set(int(i) for i in indices)
    hit = sum(1 for start, end, _tok in events if any(t in chosen for t in range(start, end)))
    return hit / len(events)


def temporal_dispersion(indices, n: int) -> float:
    """Minimum gap between consecutive selected indices, scaled by K/N and
    clipped to [0, 1]; 1.0 for perfectly even spreads."""
    idx = sorted(set(int(i) for i in indices))
    k = len(idx)
    if k < 2:
        raise DataError("temporal_dispersion needs at least 2 distinct indices")
    min_gap = min(b - a for a, b in zip(idx, idx[1:]))
    return float(min(1.0, min_gap * k / n))


@dataclass
class EvalReport:
    rows: list[dict]        # per video x strategy
    aggregate: dict         # strategy -> {metric: {mean, std}}

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "aggregate": self.aggregate}, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=[
                "video_id", "strategy", "indices", "event_recall", "temporal_dispersion"])
            writer.writeheader()
            for row in self.rows:
                out = dict(row)
                out["indices"] = "|".join(str(i) for i in row["indices"])
                writer.writerow(out)


def select_frames(strategy: str, s_hat, n: int, k: int,
                  retain_endpoints: bool = True) -> list[int]:
    if strategy == "uniform":
        return uniform_sample(n, k)
    if strategy == "global_topk":
        return global_topk(s_hat, k)
    if strategy == "stratified":
        return list(stratified_topk(s_hat, k, retain_endpoints).indices)
    raise ParamError(f"unknown strategy {strategy!r}")


def evaluate_corpus(params: TSNetParams, tsnet_cfg: TSNetConfig,
                    corpus: list[SyntheticVideo], k: int,
                    strategies=STRATEGIES, retain_endpoints: bool = True) -> EvalReport:
    """Score every video once, then apply each selection strategy at budget K."""
    rows = []
    for video in corpus:
        seq = video.embeddings
        s_hat = None
        if any(s != "uniform" for s in strategies):
            _s, s_hat, _cache = tsnet_forward(params, tsnet_cfg, seq)
        for strategy in strategies:
            indices = select_frames(strategy, s_hat, seq.n_frames, k, retain_endpoints)
            rows.append({
                "video_id": seq.video_id,
                "strategy": strategy,
                "indices": indices,
                "event_recall": event_recall(indices, video.events),
                "temporal_dispersion": temporal_dispersion(indices, seq.n_frames),
            })
    aggregate = {}
    for strategy in strategies:
        sub = [r for r in rows if r["strategy"] == strategy]
        aggregate[strategy] = {
            metric: {"mean": float(np.mean([r[metric] for r in sub])),
                     "std": float(np.std([r[metric] for r in sub]))}
            for metric in ("event_recall", "temporal_dispersion")
        }
    return EvalReport(rows, aggregate)
