"""Command-line entry point: prepare, train, embed, evaluate, recommend.

Config precedence: explicit flags override values from ``--config`` (a JSON
document whose keys are the long flag names with dashes as underscores),
which override built-in defaults. Every command writes its artifacts under
``<out>/<command>-<timestamp>-<confighash>/`` together with a verbatim
config echo, and fails with a single-line ``error-class: message`` on
stderr and exit code 1.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from beekit import beeformer, dataio, elsa, evalkit, recsys
from beekit.encoders import (BowLinear, BowMlp, EmbeddingTable, FrozenPlusHead,
                             featurize)
from beekit.errors import BeekitError, ConfigError
from beekit.recsys import EmbeddingMatrix
from beekit.sparse import InteractionMatrix, gather_columns


def _add_data_flags(p):
    p.add_argument("--interactions", help="interactions file (csv/tsv)")
    p.add_argument("--items", help="item texts file (csv/jsonl)")
    p.add_argument("--bundle", help="prepared dataset directory (from `prepare`)")
    p.add_argument("--format", default="csv", choices=["csv", "tsv"])
    p.add_argument("--items-format", default="csv", choices=["csv", "jsonl"])
    p.add_argument("--rating-threshold", type=float, default=4.0)
    p.add_argument("--min-user-interactions", type=int, default=5)


def _add_split_flags(p):
    p.add_argument("--split", choices=["item", "time"])
    p.add_argument("--n-test-items", type=int, default=2000)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beekit")
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap for internal worker pools (execution is "
                             "serial in this implementation)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest and filter a raw dataset")
    _add_data_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train an encoder (or the CF baseline)")
    _add_data_flags(p)
    _add_split_flags(p)
    p.add_argument("--mode", default="beeformer", choices=["beeformer", "elsa"])
    p.add_argument("--encoder", default="bow-linear",
                   choices=["table", "bow-linear", "bow-mlp", "frozen-head"])
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--hash-bits", type=int, default=16)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--base-embeddings", help="embedding file for frozen-head")
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--batch-users", type=int, default=128)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--chunk-size", type=int, default=0,
                   help="items per encode chunk (0 = whole batch)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true",
                   help="skip row-normalizing embeddings inside the loss")
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="export item embeddings from a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--precision", default="f8", choices=["f8", "f4"])
    p.add_argument("--l2-normalize", default="auto", choices=["auto", "on", "off"],
                   help="auto follows the checkpoint's training setting")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="run an evaluation protocol")
    _add_data_flags(p)
    _add_split_flags(p)
    p.add_argument("--embeddings", help="embedding file (for model=embeddings)")
    p.add_argument("--model", default="embeddings",
                   choices=["embeddings", "popularity", "item-knn"])
    p.add_argument("--scenario", required=True,
                   choices=["zero-shot", "cold-start", "supervised"])
    p.add_argument("--k", default="20,50", help="comma-separated recall depths")
    p.add_argument("--ndcg-k", type=int, default=100)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--recall-denominator", default="calibrated",
                   choices=["calibrated", "full"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recommend", help="write top-K lists for every user")
    _add_data_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", required=True)
    return parser


def _merge_config(argv, parser):
    """Two-pass parse so flags override the config file."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    try:
        with open(known.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {known.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a JSON object")
    args = parser.parse_args(argv)
    valid = set(vars(args))
    explicit = _explicit_dests(argv)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def _explicit_dests(argv):
    dests = set()
    for token in argv:
        if token.startswith("--"):
            dests.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return dests


def _run_dir(args) -> str:
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    digest = hashlib.sha1(json.dumps(echo, sort_keys=True, default=str)
                          .encode()).hexdigest()[:8]
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = os.path.join(args.out, f"{args.command}-{stamp}-{digest}")
    path, n = base, 1
    while os.path.exists(path):
        path = f"{base}-{n}"
        n += 1
    os.makedirs(path)
    with open(os.path.join(path, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True, default=str)
    return path


def _load_dataset(args, need_texts=False) -> dataio.DatasetBundle:
    if args.bundle:
        bundle = dataio.load_bundle(args.bundle)
    elif args.interactions:
        raw = dataio.load_interactions(args.interactions, fmt=args.format)
        threshold = args.rating_threshold
        if threshold is not None and raw.ratings is None:
            threshold = None
        bundle = dataio.implicitize(raw, rating_threshold=threshold,
                                    min_user_interactions=args.min_user_interactions)
        if args.items:
            texts = dataio.load_texts(args.items, fmt=args.items_format)
            bundle = dataio.join_texts(bundle, texts,
                                       min_user_interactions=args.min_user_interactions)
    else:
        raise ConfigError("either --bundle or --interactions is required")
    if need_texts and bundle.corpus is None:
        raise ConfigError("this command needs item texts (--items)")
    return bundle


def _restrict_items(x: InteractionMatrix, items) -> InteractionMatrix:
    csr = gather_columns(x.csr, items)
    return InteractionMatrix(csr, x.user_ids, [x.item_ids[i] for i in items])


def _make_split(args, x):
    if args.split == "item":
        return evalkit.split_items(x, n_test=args.n_test_items, seed=args.split_seed)
    if args.split == "time":
        return evalkit.split_time(x, fraction=args.test_fraction)
    return None


def cmd_prepare(args) -> int:
    bundle = _load_dataset(args)
    run_dir = _run_dir(args)
    dataio.save_bundle(bundle, os.path.join(run_dir, "bundle"))
    with open(os.path.join(run_dir, "filter_report.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle.meta, fh, indent=2, sort_keys=True)
    print(f"prepared {bundle.x.n_users} users x {bundle.x.n_items} items "
          f"({bundle.x.nnz} interactions) -> {run_dir}")
    return 0


def cmd_train(args) -> int:
    need_texts = args.mode == "beeformer" and args.encoder in ("bow-linear", "bow-mlp")
    bundle = _load_dataset(args, need_texts=need_texts)
    x, corpus = bundle.x, bundle.corpus

    split = _make_split(args, x)
    if isinstance(split, evalkit.ItemSplit):
        x_train = _restrict_items(x, split.train_items)
        corpus_train = corpus.subset(split.train_items) if corpus else None
    elif isinstance(split, evalkit.TimeSplit):
        x_train, corpus_train = split.train, corpus
    else:
        x_train, corpus_train = x, corpus

    run_dir = _run_dir(args)
    ckpt = os.path.join(run_dir, "checkpoint.bee")
    normalize = not args.no_normalize

    if args.mode == "elsa":
        model = elsa.train_elsa(x_train, d=args.dim, epochs=args.epochs,
                                batch_users=args.batch_users, lr=args.lr,
                                seed=args.seed, normalize=normalize)
        dataio.save_elsa(model, ckpt)
        log_lines = [f"{e}\t{loss!r}" for e, loss in enumerate(model.history)]
        summary = {"mode": "elsa", "epoch_losses": model.history}
    else:
        enc = _build_encoder(args, x_train, corpus_train)
        cfg = beeformer.SamplerConfig(m=args.m, batch_users=args.batch_users,
                                      seed=args.seed)
        enc, report = beeformer.train(
            enc, x_train, corpus_train, cfg, epochs=args.epochs, lr=args.lr,
            item_chunk_size=args.chunk_size, normalize=normalize)
        dataio.save_encoder(enc, ckpt, item_ids=x_train.item_ids,
                            extra_meta={"train_normalize": normalize})
        log_lines = report.loss_log_lines()
        summary = report.summary()

    with open(os.path.join(run_dir, "train_log.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    with open(os.path.join(run_dir, "train_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
    print(f"checkpoint -> {ckpt}")
    return 0


def _build_encoder(args, x_train, corpus_train):
    if args.encoder == "table":
        return EmbeddingTable(x_train.n_items, args.dim, seed=args.seed)
    if args.encoder in ("bow-linear", "bow-mlp"):
        features = featurize(corpus_train, args.hash_bits)
        if args.encoder == "bow-linear":
            return BowLinear(features, args.dim, seed=args.seed)
        return BowMlp(features, args.dim, hidden=args.hidden, seed=args.seed)
    if args.encoder == "frozen-head":
        if not args.base_embeddings:
            raise ConfigError("frozen-head needs --base-embeddings")
        base = dataio.import_embeddings(args.base_embeddings,
                                        expect_item_ids=x_train.item_ids)
        return FrozenPlusHead(base.a, args.dim, seed=args.seed)
    raise ConfigError(f"unknown encoder {args.encoder!r}")


def cmd_embed(args) -> int:
    arrays, meta = dataio.read_container(args.checkpoint)
    run_dir = _run_dir(args)
    out_path = os.path.join(run_dir, "embeddings.bee")

    if meta.get("kind") == "elsa":
        model = dataio.load_elsa(args.checkpoint)
        emb = EmbeddingMatrix(model.effective_a(), meta["item_ids"],
                              normalized=model.normalize_a)
    elif meta.get("kind") == "encoder":
        corpus = None
        if meta["encoder"]["kind"] in ("bow-linear", "bow-mlp"):
            corpus = _load_dataset(args, need_texts=True).corpus
        enc, meta = dataio.load_encoder(args.checkpoint, corpus=corpus)
        if corpus is not None:
            item_ids = corpus.item_ids
            n = len(corpus)
        else:
            item_ids = meta.get("item_ids", [])
            n = len(item_ids)
        rows = [enc.encode(np.arange(s, min(s + 1024, n)))
                for s in range(0, n, 1024)]
        a = np.vstack(rows) if rows else np.zeros((0, enc.dim))
        normalize = meta.get("train_normalize", False) \
            if args.l2_normalize == "auto" else args.l2_normalize == "on"
        if normalize:
            from beekit.sparse import normalize_rows
            a = normalize_rows(a)
        emb = EmbeddingMatrix(a, item_ids, normalized=normalize)
    else:
        raise ConfigError(f"{args.checkpoint} is not a checkpoint file")

    dataio.export_embeddings(emb, out_path, precision=args.precision)
    print(f"embeddings ({emb.n_items} x {emb.d}) -> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = _load_dataset(args)
    x = bundle.x
    if args.split is None:
        raise ConfigError("evaluate requires --split {item,time}")
    scenario = args.scenario
    if scenario in ("zero-shot", "cold-start") and args.split != "item":
        raise ConfigError(f"scenario {scenario} requires --split item")
    if scenario == "supervised" and args.split != "time":
        raise ConfigError("scenario supervised requires --split time")
    split = _make_split(args, x)

    if args.model == "embeddings":
        if not args.embeddings:
            raise ConfigError("--embeddings is required for model=embeddings")
        emb = dataio.import_embeddings(args.embeddings,
                                       expect_item_ids=x.item_ids)
        scorer = recsys.cbf_scorer(emb) if scenario != "supervised" \
            else recsys.elsa_scorer(emb)
        model_id = os.path.basename(args.embeddings)
    else:
        from beekit.sparse import zero_columns
        x_fit = split.train.csr if isinstance(split, evalkit.TimeSplit) \
            else zero_columns(x.csr, split.test_items)
        factory = recsys.popularity_scorer if args.model == "popularity" \
            else recsys.item_knn_scorer
        scorer = factory(x_fit)
        model_id = args.model

    k_list = _parse_k(args.k)
    report = evalkit.evaluate(
        scorer, x, split, scenario, k_list=k_list, ndcg_k=args.ndcg_k,
        b=args.bootstrap, seed=args.seed,
        recall_denominator=args.recall_denominator,
        config={k: v for k, v in sorted(vars(args).items())}, model_id=model_id)

    run_dir = _run_dir(args)
    with open(os.path.join(run_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    table = report.to_table()
    with open(os.path.join(run_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def _parse_k(spec) -> tuple:
    try:
        ks = tuple(int(part) for part in str(spec).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --k list {spec!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"bad --k list {spec!r}")
    return ks


def cmd_recommend(args) -> int:
    bundle = _load_dataset(args)
    x = bundle.x
    emb = dataio.import_embeddings(args.embeddings, expect_item_ids=x.item_ids)
    scores = recsys.score_cbf(x.csr, emb, np.arange(x.n_items))
    ranked = recsys.top_k(scores, args.k, seen=x.csr, mask_seen=True,
                          users=x.user_ids)
    run_dir = _run_dir(args)
    out_path = os.path.join(run_dir, "recommendations.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        for rl in ranked:
            fh.write(json.dumps({
                "user": str(rl.user),
                "items": [str(x.item_ids[i]) for i in rl.items],
                "scores": [float(s) for s in rl.scores],
            }) + "\n")
    print(f"recommendations -> {out_path}")
    return 0


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "embed": cmd_embed,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _merge_config(argv, parser)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return _COMMANDS[args.command](args)
    except BeekitError as exc:
        print(exc.one_line(), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
