"""Command-line entry point for the retrieval pipeline.

Subcommands: build-corpus, mine, train, eval, retrieve, inspect.  Exit
codes: 0 success, 2 validation failure, 3 transport failure, 1 anything
else.  Every command that takes --seed is byte-deterministic end to end;
there are no hidden entropy sources.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import TransportError, ValidationError
from .evaluator import Gallery, evaluate, format_report, load_queries, rank_gallery
from .llm import HttpTransport, MockTransport
from .miner import DEFAULT_THRESHOLD, build_dataset, load_triplets
from .model import ModelConfig, ToyEncoders, load_checkpoint
from .store import (
    KIND_CAPTION,
    EmbeddingStore,
    load_corpus,
    make_embedder,
    read_store,
    write_store,
)
from .templates import SIMILARITY_BAND, EditType
from .trainer import TrainingConfig, config_from_mapping, parse_config_file, resume, train

DEFAULT_DIM = 256


def _parse_band(text: str) -> tuple[float, float]:
    try:
        low, high = (float(part) for part in text.split(":"))
    except ValueError:
        raise ValidationError(f"band must look like 0.5:0.7, got {text!r}") from None
    if not low < high:
        raise ValidationError(f"band low must be below high, got {text!r}")
    return low, high


def _parse_ops(text: str) -> dict[EditType, float]:
    if text == "all":
        return {t: 1.0 for t in EditType}
    mix = {t: 0.0 for t in EditType}
    for name in text.split(","):
        name = name.strip()
        try:
            mix[EditType(name)] = 1.0
        except ValueError:
            valid = ",".join(t.value for t in EditType)
            raise ValidationError(f"unknown edit op {name!r}; valid: {valid}") from None
    return mix


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValidationError(f"--k must be comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ValidationError("--k values must be >= 1")
    return ks


# ------------------------------------------------------------ subcommands


def cmd_build_corpus(args) -> int:
    records = load_corpus(args.captions)
    if args.encoder == "synthetic":
        embed = make_embedder(args.dim, args.seed)
        store = EmbeddingStore.from_entries(
            args.dim, KIND_CAPTION,
            ((r.id, embed(r.caption).astype(np.float32)) for r in records),
        )
    else:
        if not args.import_path:
            raise ValidationError("--encoder import requires --import-path")
        store = read_store(args.import_path)
        if store.dim != args.dim:
            raise ValidationError(
                f"imported store dim {store.dim} != requested --dim {args.dim}")
        known = {r.id for r in records}
        missing = [i for i in store.ids() if i not in known]
        if missing:
            raise ValidationError(f"imported store has ids absent from corpus: {missing[:5]}")
    write_store(store, args.out)
    print(json.dumps({"records": len(records), "dim": store.dim,
                      "vectors": len(store), "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_mine(args) -> int:
    records = load_corpus(args.corpus)
    store = read_store(args.store)
    embed = make_embedder(store.dim, args.embed_seed)
    transport = None
    if args.method == "llm":
        transport = MockTransport.from_file(args.mock) if args.mock else HttpTransport.from_env()
    stats = build_dataset(
        records, store, args.method,
        threshold=args.threshold, seed=args.seed, out_path=args.out, embed=embed,
        edit_type_mix=_parse_ops(args.ops), band=_parse_band(args.band),
        transport=transport, retries=args.retries,
    )
    print(stats.to_json())
    return 0


def _encoders_for(records, model_config: ModelConfig, seed: int) -> ToyEncoders:
    return ToyEncoders(records, model_config.dim, seed=seed)


def _training_config(args) -> TrainingConfig:
    mapping = parse_config_file(args.config) if args.config else {}
    overrides = {
        "batch_size": args.batch_size, "epochs": args.epochs, "seed": args.seed,
        "tau": args.tau, "encoder_lr": args.encoder_lr, "head_lr": args.head_lr,
        "weight_decay": args.weight_decay, "checkpoint_interval": args.checkpoint_interval,
    }
    model_overrides = {
        "dim": args.dim, "fusion_layers": args.fusion_layers, "heads": args.heads,
        "variant": args.variant, "finetune": args.finetune,
    }
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    model_mapping = dict(mapping.get("model", {}))
    for key, value in model_overrides.items():
        if value is not None:
            model_mapping[key] = value
    mapping["model"] = model_mapping
    return config_from_mapping(mapping)


def cmd_train(args) -> int:
    config = _training_config(args)
    records = load_corpus(args.corpus)
    triplets = load_triplets(args.triplets)
    encoders = _encoders_for(records, config.model, config.seed)
    if args.resume:
        report = resume(args.resume, config, triplets, encoders, out_path=args.out)
    else:
        report = train(config, triplets, encoders, args.out)
    print(json.dumps({
        "steps": report.steps,
        "epoch_losses": [round(x, 6) for x in report.epoch_losses],
        "checkpoint": str(args.out),
    }, sort_keys=True))
    return 0


def _load_model(checkpoint, corpus_path):
    records = load_corpus(corpus_path)
    with open(str(checkpoint) + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    model_config = ModelConfig.from_dict(sidecar["model"])
    seed = int(sidecar.get("training", {}).get("seed", 0))
    encoders = _encoders_for(records, model_config, seed)
    model, _, _ = load_checkpoint(checkpoint, encoders)
    return model, records


def cmd_eval(args) -> int:
    model, records = _load_model(args.checkpoint, args.corpus)
    queries = load_queries(args.queries)
    if args.gallery == "corpus":
        ids = [r.id for r in records]
    else:  # targets named by the query file
        ids = sorted({q.target_id for q in queries})
    gallery = Gallery.from_model(model, ids)
    report = evaluate(model, queries, gallery, ks=_parse_ks(args.k))
    print(format_report(report))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def cmd_retrieve(args) -> int:
    model, records = _load_model(args.checkpoint, args.corpus)
    gallery = Gallery.from_model(model, [r.id for r in records])
    query = model.compose_query(args.ref_id, args.caption).data
    result = rank_gallery(query, gallery)
    for image_id, score in result.ranking[: args.top_k]:
        print(f"{image_id}\t{score:.6f}")
    return 0


def cmd_inspect(args) -> int:
    path = args.path
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == b"CIREMB01":
        store = read_store(path)
        print(json.dumps({"format": "embedding-store", "dim": store.dim,
                          "kind": {0: "caption", 1: "image"}[store.kind],
                          "count": len(store)}, sort_keys=True))
    elif head == b"CIRCKPT1":
        from .numcore import read_tensors
        tensors = read_tensors(path)
        print(json.dumps({"format": "checkpoint",
                          "tensors": {k: list(v.shape) for k, v in sorted(tensors.items())}},
                         sort_keys=True))
    else:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            count = 1 + sum(1 for _ in fh)
        kind = "unknown"
        if first.startswith("{"):
            fields = set(json.loads(first))
            if {"ref_id", "target_id", "relative_caption"} <= fields:
                kind = "triplets"
            elif {"id", "caption"} <= fields:
                kind = "corpus"
            elif {"ref_id", "relative_caption", "target_id"} & fields:
                kind = "queries"
        print(json.dumps({"format": kind, "lines": count}, sort_keys=True))
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cirforge",
        description="Composed-image-retrieval pipeline: embed, mine, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("build-corpus", formatter_class=fmt,
                       help="embed a caption corpus into a binary store")
    p.add_argument("--captions", required=True, help="corpus JSON-lines file")
    p.add_argument("--out", required=True, help="output store path")
    p.add_argument("--encoder", choices=("synthetic", "import"), default="synthetic",
                   help="synthetic embedder or re-validate an imported store")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM, help="embedding dimension")
    p.add_argument("--seed", type=int, default=0, help="synthetic embedder seed")
    p.add_argument("--import-path", help="store produced by an export tool")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("mine", formatter_class=fmt, help="mine training triplets")
    p.add_argument("--method", choices=("template", "llm"), required=True)
    p.add_argument("--corpus", required=True, help="corpus JSON-lines file")
    p.add_argument("--store", required=True, help="caption embedding store")
    p.add_argument("--out", required=True, help="output triplet JSON-lines file")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="minimum target cosine similarity")
    p.add_argument("--band", default=f"{SIMILARITY_BAND[0]}:{SIMILARITY_BAND[1]}",
                   help="phrase-substitution similarity band low:high")
    p.add_argument("--ops", default="all", help="comma-separated edit types, or 'all'")
    p.add_argument("--seed", type=int, default=0, help="edit sampling seed")
    p.add_argument("--embed-seed", type=int, default=0,
                   help="seed of the synthetic embedder; must match the store's")
    p.add_argument("--mock", help="JSON-lines canned responses for the llm method")
    p.add_argument("--retries", type=int, default=2, help="llm parse retries per caption")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", formatter_class=fmt, help="train the fusion model")
    p.add_argument("--triplets", required=True, help="triplet JSON-lines file")
    p.add_argument("--corpus", required=True, help="corpus JSON-lines file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key = value config file with dotted names")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--encoder-lr", type=float, dest="encoder_lr")
    p.add_argument("--head-lr", type=float, dest="head_lr")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--checkpoint-interval", type=int, dest="checkpoint_interval")
    p.add_argument("--dim", type=int)
    p.add_argument("--fusion-layers", type=int, dest="fusion_layers")
    p.add_argument("--heads", type=int)
    p.add_argument("--variant", choices=("full", "no_fusion", "static_aggregation"))
    p.add_argument("--finetune", choices=("freeze", "text_only", "both"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=fmt, help="evaluate recall metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True,
                   help="queries JSON-lines (triplet files work directly)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", default="1,5,10,50", help="comma-separated recall cutoffs")
    p.add_argument("--gallery", choices=("corpus", "targets"), default="corpus",
                   help="rank against the whole corpus or the query targets")
    p.add_argument("--report", help="also write the metric JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", formatter_class=fmt,
                       help="rank the gallery for one composed query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ref-id", type=int, required=True, dest="ref_id")
    p.add_argument("--caption", required=True, help="relative caption")
    p.add_argument("--top-k", type=int, default=10, dest="top_k")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("inspect", formatter_class=fmt,
                       help="summarize a store, checkpoint, or JSON-lines file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports anything
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
