#!/usr/bin/env python3
"""Synthetic benchmark: generate a corpus, train the selector, compare strategies.

Runs the full pipeline in-process over several seeds and prints mean
event recall and temporal dispersion for uniform sampling, global top-k,
and stratified selection, alongside an untrained-selector baseline.

Example:
    python scripts/run_synthetic_benchmark.py --videos 50 --seeds 0 1 2
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from lfs.captioner import ToyCaptioner
from lfs.embeddings_io import SyntheticSpec, synth_generate
from lfs.evaluation import STRATEGIES, evaluate_corpus
from lfs.tsnet import save_checkpoint, tsnet_init
from lfs.trainer import TrainConfig, train


def build_corpus(args):
    spec = dict(n_frames=args.frames, dim=args.dim, n_events=args.events,
                event_len_mean=args.event_len, event_len_jitter=args.jitter,
                background_noise=args.noise, vocab_size=args.vocab)
    return [synth_generate(SyntheticSpec(seed=args.corpus_seed * 1_000_000 + i, **spec))
            for i in range(args.videos)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", type=int, default=200)
    ap.add_argument("--frames", type=int, default=256)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--events", type=int, default=5)
    ap.add_argument("--event-len", type=int, default=8)
    ap.add_argument("--jitter", type=int, default=3)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--vocab", type=int, default=8)
    ap.add_argument("--corpus-seed", type=int, default=1)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--hidden", type=int, default=256)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=None,
                    help="directory for checkpoints and the JSON summary")
    args = ap.parse_args()

    corpus = build_corpus(args)
    oracle = ToyCaptioner.seeded(args.vocab, args.dim, 42)
    print(f"corpus: {args.videos} videos of {args.frames}x{args.dim}, "
          f"{args.events} events each; K={args.k}")

    summary = {"args": vars(args) | {"out": str(args.out) if args.out else None},
               "runs": []}
    means = {s: {"event_recall": [], "temporal_dispersion": []} for s in STRATEGIES}
    for seed in args.seeds:
        cfg = TrainConfig(seed=seed, epochs=args.epochs, hidden=args.hidden,
                          k_max=args.k)
        t0 = time.time()
        params, log = train(corpus, oracle, cfg)
        report = evaluate_corpus(params, cfg.tsnet_config(args.dim), corpus, k=args.k)
        dt = time.time() - t0
        row = {"seed": seed, "train_seconds": round(dt, 1),
               "final_total_loss": log[-1]["total"],
               "aggregate": report.aggregate}
        summary["runs"].append(row)
        for s in STRATEGIES:
            for metric in ("event_recall", "temporal_dispersion"):
                means[s][metric].append(report.aggregate[s][metric]["mean"])
        print(f"seed {seed}: trained in {dt:.1f}s, "
              f"stratified recall {report.aggregate['stratified']['event_recall']['mean']:.3f}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(params, cfg.tsnet_config(args.dim),
                            args.out / f"seed{seed}.lfsp")

    cfg0 = TrainConfig(seed=args.seeds[0], hidden=args.hidden, k_max=args.k)
    tsc = cfg0.tsnet_config(args.dim)
    null = evaluate_corpus(tsnet_init(tsc, 0), tsc, corpus, k=args.k)
    summary["untrained_baseline"] = null.aggregate

    print(f"\n{'strategy':<14}{'recall':>10}{'dispersion':>12}")
    for s in STRATEGIES:
        print(f"{s:<14}{np.mean(means[s]['event_recall']):>10.3f}"
              f"{np.mean(means[s]['temporal_dispersion']):>12.3f}")
    print(f"{'null-strat.':<14}"
          f"{null.aggregate['stratified']['event_recall']['mean']:>10.3f}"
          f"{null.aggregate['stratified']['temporal_dispersion']['mean']:>12.3f}")

    if args.out:
        (args.out / "summary.json").write_text(json.dumps(summary, indent=2))
        print(f"\nwrote {args.out / 'summary.json'}")


if __name__ == "__main__":
    main()
