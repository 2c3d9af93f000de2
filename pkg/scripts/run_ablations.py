#!/usr/bin/env python3
"""Ablation sweep: retrain with individual model components disabled.

Trains the full model plus one variant per toggled-off component on a shared
synthetic corpus and prints recall/dispersion per variant. Variants that
disable stratified selection are evaluated with global top-k instead.

Example:
    python scripts/run_ablations.py --videos 50 --epochs 3
"""

import argparse
import time

from lfs.captioner import ToyCaptioner
from lfs.embeddings_io import SyntheticSpec, synth_generate
from lfs.evaluation import evaluate_corpus
from lfs.trainer import TrainConfig, train

VARIANTS = {
    "full": {},
    "w/o stratified": {"stratified": False},
    "w/o gating": {"gating": False},
    "w/o norm": {"norm": False},
    "w/o caption loss": {"caption_loss": False},
    "w/o entropy reg": {"entropy_reg": False},
    "w/o l1 reg": {"l1_reg": False},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", type=int, default=200)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--vocab", type=int, default=8)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--hidden", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = [synth_generate(SyntheticSpec(seed=1_000_000 + i, dim=args.dim,
                                           vocab_size=args.vocab))
              for i in range(args.videos)]
    oracle = ToyCaptioner.seeded(args.vocab, args.dim, 42)

    print(f"{'variant':<18}{'recall':>10}{'dispersion':>12}{'seconds':>10}")
    for label, toggles in VARIANTS.items():
        cfg = TrainConfig(seed=args.seed, epochs=args.epochs, hidden=args.hidden,
                          k_max=args.k, **toggles)
        t0 = time.time()
        params, _ = train(corpus, oracle, cfg)
        strategy = "stratified" if cfg.stratified else "global_topk"
        report = evaluate_corpus(params, cfg.tsnet_config(args.dim), corpus,
                                 k=args.k, strategies=(strategy,))
        agg = report.aggregate[strategy]
        print(f"{label:<18}{agg['event_recall']['mean']:>10.3f}"
              f"{agg['temporal_dispersion']['mean']:>12.3f}"
              f"{time.time() - t0:>10.1f}")


if __name__ == "__main__":
    main()
