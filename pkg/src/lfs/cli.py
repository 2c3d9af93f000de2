"""Command-line surface: corpus generation, training, selection, evaluation,
and per-frame importance export.

Exit codes: 0 ok, 2 usage/spec error, 3 numerics error, 4 I/O error.
TOML config files mirror TrainConfig / SyntheticSpec; unknown keys are
rejected. Flags override file values; env var LFS_SEED overrides the seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .captioner import ToyCaptioner, verify_oracle
from .embeddings_io import (SyntheticSpec, SyntheticVideo, read_captions,
                            read_embeddings, read_events, synth_generate,
                            write_captions, write_embeddings, write_events)
from .errors import (DataError, FormatError, IoError, NumericsError,
                     ParamError, ShapeError, SpecError)
from .evaluation import STRATEGIES, evaluate_corpus
from .selector import soft_distribution, stratified_topk
from .trainer import TrainConfig, train
from .tsnet import load_checkpoint, save_checkpoint, tsnet_forward

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_NUMERICS = 3
EXIT_IO = 4

DEFAULT_ORACLE_SEED = 42


def _load_toml(path, allowed: set[str]) -> dict:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ParamError(f"{path}: invalid TOML: {e}") from e
    unknown = set(data) - allowed
    if unknown:
        raise ParamError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def _apply_seed_env(cfg_dict: dict) -> dict:
    env = os.environ.get("LFS_SEED")
    if env is not None:
        cfg_dict["seed"] = int(env)
    return cfg_dict


def load_train_config(path=None, overrides=None) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    data = _load_toml(path, fields) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    _apply_seed_env(data)
    return TrainConfig(**data)


def load_corpus(corpus_dir) -> list[SyntheticVideo]:
    corpus_dir = Path(corpus_dir)
    captions = {r.video_id: r for r in read_captions(corpus_dir / "captions.jsonl")}
    events_path = corpus_dir / "events.jsonl"
    events = read_events(events_path) if events_path.exists() else {}
    corpus = []
    for path in sorted(corpus_dir.glob("*.lfse")):
        seq = read_embeddings(path)
        if seq.video_id not in captions:
            raise DataError(f"no caption record for {seq.video_id}")
        corpus.append(SyntheticVideo(seq, captions[seq.video_id],
                                     events.get(seq.video_id, [])))
    if not corpus:
        raise ParamError(f"no .lfse files in {corpus_dir}")
    return corpus


def cmd_gen(args) -> int:
    spec_fields = {f.name for f in dataclasses.fields(SyntheticSpec)}
    data = _load_toml(args.spec, spec_fields | {"n_videos"})
    n_videos = int(data.pop("n_videos", 1))
    _apply_seed_env(data)
    base = SyntheticSpec(**data)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    videos = []
    for i in range(n_videos):
        spec_i = dataclasses.replace(base, seed=base.seed * 1_000_000 + i)
        try:
            videos.append(synth_generate(spec_i))
        except SpecError as e:
            print(f"error: video {i}: {e}", file=sys.stderr)
            return EXIT_SPEC
    for v in videos:
        write_embeddings(v.embeddings, out / f"{v.embeddings.video_id}.lfse")
    write_captions([v.caption for v in videos], out / "captions.jsonl")
    write_events(videos, out / "events.jsonl")
    manifest = {"spec": dataclasses.asdict(base), "n_videos": n_videos,
                "video_ids": [v.embeddings.video_id for v in videos]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {n_videos} videos ({base.n_frames}x{base.dim}, "
          f"{base.n_events} events each) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"epochs": args.epochs, "seed": args.seed, "lr": args.lr,
                 "k_max": args.k, "hidden": args.hidden}
    cfg = load_train_config(args.config, overrides)
    corpus = load_corpus(args.corpus)
    dim = corpus[0].embeddings.dim
    vocab = corpus[0].caption.vocab_size
    oracle = ToyCaptioner.seeded(vocab, dim, seed=args.oracle_seed)
    report = verify_oracle(oracle)
    if not report["passed"]:
        print(f"error: oracle failed gradient audit: {report}", file=sys.stderr)
        return EXIT_NUMERICS

    out = Path(args.out)
    log_path = out.with_suffix(out.suffix + ".log.jsonl")
    tsnet_cfg = cfg.tsnet_config(dim)

    def checkpoint_epoch(epoch, params):
        save_checkpoint(params, tsnet_cfg, out.with_suffix(f".epoch{epoch}.lfsp"))

    try:
        params, log = train(corpus, oracle, cfg, epoch_callback=checkpoint_epoch)
    except NumericsError as e:
        if getattr(e, "last_good_params", None) is not None:
            save_checkpoint(e.last_good_params, tsnet_cfg, out)
            _write_log(log_path, cfg, e.log)
        print(f"error: {e} (last good checkpoint kept at {out})", file=sys.stderr)
        return EXIT_NUMERICS
    save_checkpoint(params, tsnet_cfg, out)
    _write_log(log_path, cfg, log)
    print(f"trained {cfg.epochs} epochs over {len(corpus)} videos -> {out}")
    return EXIT_OK


def _write_log(path, cfg: TrainConfig, log: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"config": cfg.to_dict()}) + "\n")
        for row in log:
            f.write(json.dumps(row) + "\n")


def cmd_select(args) -> int:
    params, tsnet_cfg = load_checkpoint(args.checkpoint)
    seq = read_embeddings(args.embeddings)
    if args.k > seq.n_frames:
        print(f"error: k={args.k} > N={seq.n_frames}", file=sys.stderr)
        return EXIT_SPEC
    _s, s_hat, _cache = tsnet_forward(params, tsnet_cfg, seq)
    result = stratified_topk(s_hat, args.k, args.retain_endpoints)
    # invariant echo: strictly increasing, one index inside each segment
    assert all(a < b for a, b in zip(result.indices, result.indices[1:]))
    assert all(lo <= i < hi for (lo, hi), i in zip(result.segments, result.indices))
    scores = [float(s_hat[i]) for i in result.indices]
    print(result.to_json(seq.video_id, scores))
    return EXIT_OK


def cmd_importance(args) -> int:
    params, tsnet_cfg = load_checkpoint(args.checkpoint)
    seq = read_embeddings(args.embeddings)
    if args.k > seq.n_frames:
        print(f"error: k={args.k} > N={seq.n_frames}", file=sys.stderr)
        return EXIT_SPEC
    s, s_hat, _cache = tsnet_forward(params, tsnet_cfg, seq)
    p = soft_distribution(s_hat, args.tau).p
    selected = set(stratified_topk(s_hat, args.k, args.retain_endpoints).indices)
    try:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame_index", "s", "s_hat", "p", "selected"])
            for t in range(seq.n_frames):
                writer.writerow([t, repr(float(s[t])), repr(float(s_hat[t])),
                                 repr(float(p[t])), int(t in selected)])
    except OSError as e:
        print(f"error: cannot write {args.csv}: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {seq.n_frames} rows to {args.csv}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, tsnet_cfg = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    strategies = tuple(args.strategies.split(","))
    for s in strategies:
        if s not in STRATEGIES:
            print(f"error: unknown strategy {s!r}", file=sys.stderr)
            return EXIT_SPEC
    report = evaluate_corpus(params, tsnet_cfg, corpus, args.k, strategies,
                             retain_endpoints=args.retain_endpoints)
    out_json = Path(args.out_json)
    payload = json.loads(report.to_json())
    payload["config"] = {"k": args.k, "strategies": list(strategies),
                         "retain_endpoints": args.retain_endpoints,
                         "checkpoint": str(args.checkpoint)}
    out_json.write_text(json.dumps(payload, indent=2))
    report.write_csv(args.out_csv)
    print(f"{'strategy':<14} {'event_recall':>14} {'dispersion':>14}")
    for strategy in strategies:
        agg = report.aggregate[strategy]
        print(f"{strategy:<14} {agg['event_recall']['mean']:>8.4f} "
              f"± {agg['event_recall']['std']:.4f} "
              f"{agg['temporal_dispersion']['mean']:>8.4f} "
              f"± {agg['temporal_dispersion']['std']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic event-video corpus")
    p.add_argument("--spec", required=True, help="TOML file mirroring SyntheticSpec (+ n_videos)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; generation is cheap")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the frame selector on a corpus")
    p.add_argument("--config", default=None, help="TOML file mirroring TrainConfig")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output LFSP checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="frame budget override")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--oracle-seed", type=int, default=DEFAULT_ORACLE_SEED)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="stratified top-k selection for one video")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--retain-endpoints", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("importance", help="export the per-frame importance field as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--retain-endpoints", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("eval", help="compare selection strategies on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--strategies", default="uniform,global_topk,stratified")
    p.add_argument("--out-json", default="eval_report.json")
    p.add_argument("--out-csv", default="eval_report.csv")
    p.add_argument("--retain-endpoints", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; evaluation is cheap")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, ParamError, FormatError, DataError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SPEC
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICS
    except (IoError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
