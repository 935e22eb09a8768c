"""Command-line driver for the retrieval pipeline.

Subcommands: synth, train, encode-motions, encode-texts, index, search,
evaluate, sweep, serve. Exit codes: 0 success, 2 usage errors / missing
files, 1 anything else (with a diagnostic on stderr).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoints import (
    load_motion_checkpoint,
    load_text_checkpoint,
    save_motion_checkpoint,
    save_text_checkpoint,
)
from .common_space import TrainConfig
from .data import write_synthetic_dataset
from .evaluation import dedupe_queries, load_relevance
from .index import EmbeddingStore, knn_query, load_index, save_index
from .io_utils import FormatError
from .pipeline import (
    TextInputBuilder,
    embed_query_text,
    encode_caption_set,
    encode_motion_set,
    evaluate_components,
    load_dataset,
    run_sweep,
    train_on_dataset,
)
from .service import CONFIG_ENV_VAR, ServiceConfig, serve


def _cmd_synth(args: argparse.Namespace) -> int:
    manifest = write_synthetic_dataset(
        args.out,
        n_pairs=args.pairs,
        seed=args.seed,
        fps=args.fps,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
    )
    n_captions = len(manifest.captions_for())
    print(f"wrote {len(manifest.entries)} motions / {n_captions} captions to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig.from_file(args.config)
    dataset = load_dataset(args.data)
    result = train_on_dataset(config, dataset, max_steps=args.steps)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_motion_checkpoint(out_dir / "model.menc", result.model.motion_encoder, result.model.motion_proj)
    save_text_checkpoint(
        out_dir / "model.tenc",
        result.model.text_encoder,
        result.model.text_proj,
        result.model.log_tau.item(),
        upstream=result.builder.upstream,
        vocab=result.builder.vocab,
    )
    history = {
        "steps": len(result.history),
        "seconds": result.seconds,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "loss": result.history,
    }
    (out_dir / "history.json").write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")
    print(
        f"trained {len(result.history)} steps in {result.seconds:.1f}s: "
        f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f}"
    )
    print(f"checkpoints written to {out_dir / 'model.menc'} and {out_dir / 'model.tenc'}")
    return 0


def _cmd_encode_motions(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    encoder, projection = load_motion_checkpoint(args.checkpoint)
    embeddings = encode_motion_set(
        encoder, projection, dataset, split=args.split, max_len=args.max_len
    )
    save_index(EmbeddingStore.build(embeddings), args.out)
    print(f"encoded {len(embeddings)} motions -> {args.out}")
    return 0


def _cmd_encode_texts(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    ckpt = load_text_checkpoint(args.checkpoint)
    builder = TextInputBuilder.from_text_checkpoint(ckpt, base_dir=Path(args.checkpoint).parent)
    captions = dataset.manifest.captions_for(args.split)
    if not args.no_dedupe:
        captions = dedupe_queries(captions)
    embeddings = encode_caption_set(ckpt.encoder, ckpt.projection, builder, captions)
    save_index(EmbeddingStore.build(embeddings), args.out)
    print(f"encoded {len(embeddings)} captions -> {args.out}")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    store = load_index(args.embeddings)
    rebuilt = EmbeddingStore.build([(mid, store.vector(mid)) for mid in store.ids])
    save_index(rebuilt, args.out)
    print(f"indexed {len(rebuilt)} vectors ({rebuilt.dimension} dims) -> {args.out}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    store = load_index(args.index)
    ckpt = load_text_checkpoint(args.checkpoint)
    vector = embed_query_text(ckpt, args.text, base_dir=Path(args.checkpoint).parent)
    ranking = knn_query(store, vector, k=args.k)
    for rank, (motion_id, score) in enumerate(ranking.items, start=1):
        print(f"{rank} {motion_id} {score:.6f}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    motion_encoder, motion_proj = load_motion_checkpoint(args.motion_checkpoint)
    ckpt = load_text_checkpoint(args.text_checkpoint)
    builder = TextInputBuilder.from_text_checkpoint(
        ckpt, base_dir=Path(args.text_checkpoint).parent
    )
    relevances = [load_relevance(path) for path in args.relevance]
    report = evaluate_components(
        motion_encoder,
        motion_proj,
        ckpt.encoder,
        ckpt.projection,
        builder,
        dataset,
        split=args.split,
        max_len=args.max_len,
        relevances=relevances,
        with_lexical=not args.no_lexical,
    )
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = TrainConfig.from_file(args.config)
    dataset = load_dataset(args.data)
    grid_text = Path(args.grid).read_text(encoding="utf-8") if Path(args.grid).exists() else args.grid
    grid = json.loads(grid_text)
    result = run_sweep(config, dataset, grid=grid, split=args.split, max_steps=args.steps)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "sweep.tsv").write_text(result.format_table() + "\n", encoding="utf-8")
    print(result.format_table())
    print(f"sweep results written to {out_dir}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    if args.config:
        config = ServiceConfig.from_file(args.config)
    elif args.index and args.text_checkpoint:
        config = ServiceConfig(
            index_path=args.index,
            text_checkpoint=args.text_checkpoint,
            manifest=args.manifest,
            host=args.host,
            port=args.port,
            default_k=args.k,
            frontend_dir=args.frontend_dir,
        )
    else:
        config = ServiceConfig.from_env()
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motret", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic text-motion dataset")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--min-frames", type=int, default=24)
    p.add_argument("--max-frames", type=int, default=40)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="path to manifest.json")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=None, help="optional step cap")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode-motions", help="embed motions with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="model.menc")
    p.add_argument("--split", default=None)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode_motions)

    p = sub.add_parser("encode-texts", help="embed captions with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="model.tenc")
    p.add_argument("--split", default=None)
    p.add_argument("--no-dedupe", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode_texts)

    p = sub.add_parser("index", help="validate and renormalize an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("search", help="query an index with free text")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True, help="model.tenc")
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("evaluate", help="run the retrieval evaluation protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--motion-checkpoint", required=True)
    p.add_argument("--text-checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--relevance", action="append", default=[], help="precomputed .relv file")
    p.add_argument("--no-lexical", action="store_true")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate a config grid")
    p.add_argument("--config", required=True, help="base train config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="JSON object or path, e.g. '{\"d_common\": [8, 64]}'")
    p.add_argument("--split", default="train")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("serve", help="start the HTTP query service")
    p.add_argument("--config", default=None, help=f"service config JSON (or set {CONFIG_ENV_VAR})")
    p.add_argument("--index", default=None)
    p.add_argument("--text-checkpoint", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--frontend-dir", default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    main()
