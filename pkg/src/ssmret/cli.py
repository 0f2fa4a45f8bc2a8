"""Command-line entry point: ``ssmret <subcommand> [flags]``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every subcommand
that writes files also writes ``<out>.manifest.json`` with the resolved
flags and a SHA-256 of every artifact.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from .errors import SsmRetError

log = logging.getLogger("ssmret")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, args: argparse.Namespace, artifacts: list[Path]) -> Path:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": resolved,
        "artifacts": {p.name: sha256(p) for p in artifacts},
    }
    path = out.with_name(out.name + ".manifest.json") if not out.is_dir() else out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _check_out(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} already exists (use --force to overwrite)")


# -- subcommands ------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .training.data import VocabProfile, generate_synthetic_dataset, write_jsonl, write_qrels

    if args.n_queries > args.n_docs:
        raise UsageError("--n-queries cannot exceed --n-docs")
    n_train = args.n_train if args.n_train is not None else (2 * args.n_queries) // 3
    if not 0 <= n_train <= args.n_queries:
        raise UsageError("--n-train must lie between 0 and --n-queries")
    out = Path(args.out)
    files = [out / n for n in ("corpus.jsonl", "queries.jsonl", "train_queries.jsonl", "test_queries.jsonl", "qrels.tsv")]
    for f in files:
        _check_out(f, args.force)
    out.mkdir(parents=True, exist_ok=True)
    profile = VocabProfile(long_mode=args.long_mode, target_chars=args.target_chars)
    ds = generate_synthetic_dataset(args.seed, args.n_docs, args.n_queries, profile)
    train_q, test_q = ds.split(n_train)
    write_jsonl(files[0], ds.corpus)
    write_jsonl(files[1], ds.queries)
    write_jsonl(files[2], train_q)
    write_jsonl(files[3], test_q)
    write_qrels(files[4], ds.qrels)
    write_manifest(out, args, files)
    return 0


def _build_model(args):
    from .attention import AttentionEncoder, matched_attention_config
    from .ssm import EncoderConfig, SsmEncoder

    max_len = max(args.max_len, args.query_max_len)
    ssm_cfg = EncoderConfig(
        model_dim=args.model_dim, layers=args.layers, state_size=args.state_size, max_seq_len=max_len
    )
    if args.arch == "ssm":
        return SsmEncoder.init(ssm_cfg, args.seed)
    return AttentionEncoder.init(matched_attention_config(ssm_cfg, heads=args.heads), args.seed)


def cmd_train(args) -> int:
    from .training.data import make_training_examples, read_jsonl_pairs, read_qrels
    from .training.trainer import TrainConfig, train

    data = Path(args.data)
    corpus = read_jsonl_pairs(data / "corpus.jsonl")
    queries = read_jsonl_pairs(Path(args.queries) if args.queries else data / "train_queries.jsonl")
    qrels = read_qrels(data / "qrels.tsv")
    model = _build_model(args)
    out = Path(args.out)
    artifacts = []
    if args.save_init:
        model.save(args.save_init)
        artifacts.append(Path(args.save_init))
    examples = make_training_examples(queries, qrels, corpus, args.n_negatives, args.negatives, args.seed)
    config = TrainConfig(
        temperature=args.temperature,
        batch_size=args.batch_size,
        negatives_per_query_total=args.negatives_total,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        max_query_len=args.query_max_len,
        max_passage_len=args.max_len,
        max_steps=args.max_steps,
    )
    result = train(config, examples, model)
    model.save(out)
    loss_path = out.with_name(out.name + ".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(result.losses, 1):
            w.writerow([i, repr(v)])
    write_manifest(out, args, [out, loss_path, *artifacts])
    return 0


def _load_model(path: str, max_len: int | None):
    from .model import load_encoder

    model = load_encoder(path)
    if max_len is not None and max_len > model.config.max_seq_len:
        model = model.with_max_len(max_len)
    return model


def cmd_index(args) -> int:
    from .index import build_index, read_jsonl, save_index

    model = _load_model(args.model, args.max_len)
    index = build_index(read_jsonl(args.corpus), model, args.batch_size, args.max_len)
    out = Path(args.out)
    save_index(index, out)
    write_manifest(out, args, [out])
    return 0


def cmd_search(args) -> int:
    from .index import load_index, read_jsonl, run_queries

    model = _load_model(args.model, args.max_len)
    index = load_index(args.index, expected_dim=model.config.model_dim)
    if args.query is not None:
        queries = [("q0", args.query)]
    elif args.queries:
        queries = list(read_jsonl(args.queries))
    else:
        raise UsageError("search needs --query or --queries")
    hits = run_queries(queries, index, model, args.k, args.max_len, args.batch_size)
    lines = [
        f"{qid} Q0 {h.doc_id} {rank} {h.score:.6f} {args.tag}"
        for qid, _ in queries
        for rank, h in enumerate(hits[qid], 1)
    ]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        write_manifest(out, args, [out])
    else:
        sys.stdout.write(text)
    return 0


def read_run(path: str) -> dict[str, list[str]]:
    """TREC run file -> ranked doc ids per query (ordered by the rank column)."""
    rows: dict[str, list[tuple[int, str]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise UsageError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
        rows.setdefault(parts[0], []).append((int(parts[3]), parts[2]))
    return {q: [d for _, d in sorted(v)] for q, v in rows.items()}


def cmd_eval(args) -> int:
    from .training.data import read_qrels
    from .training.metrics import evaluate

    result = evaluate(read_run(args.run), read_qrels(args.qrels), args.k)
    payload = json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(payload)
        write_manifest(out, args, [out])
    else:
        sys.stdout.write(payload)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_models, fit_scaling, time_encoder, write_rows_csv, write_summary_csv

    lengths = [int(x) for x in str(args.lengths).split(",")]
    ssm, attn = bench_models(max(lengths), args.model_dim, args.layers, args.seed)
    rows, fits = [], []
    for tag, model in (("ssm", ssm), ("attn", attn)):
        r = time_encoder(model, lengths, args.batch_size, args.repeats, args.warmup, tag, args.seed)
        rows += r
        fits.append(fit_scaling(r, model_tag=tag))
        log.info("%s alpha=%.3f", tag, fits[-1].alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out / "bench.csv")
    write_summary_csv(fits, out / "summary.csv")
    write_manifest(out, args, [out / "bench.csv", out / "summary.csv"])
    return 0


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ssmret", description="Selective-SSM dense retrieval toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic corpus, queries and qrels")
    g.add_argument("--n-docs", type=int, default=512)
    g.add_argument("--n-queries", type=int, default=192)
    g.add_argument("--n-train", type=int)
    g.add_argument("--long-mode", action="store_true")
    g.add_argument("--target-chars", type=int, default=8192)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="contrastive fine-tuning")
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--queries", help="training queries (default: <data>/train_queries.jsonl)")
    t.add_argument("--arch", choices=["ssm", "attn"], default="ssm")
    t.add_argument("--max-len", type=int, default=64, help="passage max length in tokens")
    t.add_argument("--query-max-len", type=int, default=64)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--negatives", choices=["bm25", "random"], default="bm25")
    t.add_argument("--n-negatives", type=int, default=3, help="mined negatives per query")
    t.add_argument("--negatives-total", type=int, default=63, help="cap on the shared pool per query")
    t.add_argument("--temperature", type=float, default=0.01)
    t.add_argument("--model-dim", type=int, default=32)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--state-size", type=int, default=8)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--save-init", help="also write the untrained checkpoint here")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("index", parents=[common], help="embed a JSONL corpus into an index file")
    i.add_argument("--model", required=True)
    i.add_argument("--corpus", required=True)
    i.add_argument("--max-len", type=int)
    i.add_argument("--batch-size", type=int, default=32)
    i.set_defaults(func=cmd_index)

    s = sub.add_parser("search", parents=[common], help="TREC-format top-k results")
    s.add_argument("--model", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--queries")
    s.add_argument("--query")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--max-len", type=int)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--tag", default="ssmret")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", parents=[common], help="MRR@10, Recall@k and nDCG@10 of a run file")
    e.add_argument("--run", required=True)
    e.add_argument("--qrels", required=True)
    e.add_argument("--k", type=int, default=1000)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="encoding time versus sequence length")
    b.add_argument("--lengths", default="256,512,1024,2048,4096,8192")
    b.add_argument("--batch-size", type=int, default=1)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--model-dim", type=int, default=64)
    b.add_argument("--layers", type=int, default=2)
    b.set_defaults(func=cmd_bench)
    return p


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        defaults = {}
        for key, raw in values.items():
            if key not in known or key in ("help", "config"):
                parser.error(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
                if action.choices and defaults[key] not in action.choices:
                    parser.error(f"config {key}={raw!r}: choose from {list(action.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.command in ("gen-data", "train", "index", "bench") and not args.out:
        parser.error(f"{args.command} requires --out")
    return args


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"ssmret: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ssmret: error: {exc}", file=sys.stderr)
        return 2
    except (SsmRetError, OSError) as exc:
        print(f"ssmret: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
