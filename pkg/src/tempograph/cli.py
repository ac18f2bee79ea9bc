"""Command-line interface: generate, preprocess, train, predict, eval, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .bench import run_bench, truncate_sentences
from .config import CONFIG_ENV, ConfigError, RunConfig, apply_override, load_config, set_value
from .corpus import CorpusError, Document, generate_synthetic, load_any, load_corpus, store_corpus
from .estimator import evaluate_documents, evaluate_event_pairs
from .inference import predict_documents
from .model import BiaffineScorer, CheckpointError, Vocabulary, load_vectors
from .objective import TrainingDiverged, train, write_loss_curve
from .preprocess import PreprocessError, PreprocessStats, corpus_windows, read_windows, write_windows
from .schema import SchemaError, profile as get_profile

logger = logging.getLogger("tempograph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
PREDICTION_FORMAT = "tempograph-predictions"
PREDICTION_VERSION = 1
SUMMARY_VERSION = 1


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def _input_path(value: str | None, what: str) -> Path:
    if not value:
        raise UsageError(f"no {what} given (flag or config paths section)")
    path = Path(value)
    if not path.is_file():
        raise DataError(f"{what} {path} does not exist")
    return path


def _output_path(value: str | None, what: str) -> Path:
    if not value:
        raise UsageError(f"no {what} given (flag or config paths section)")
    path = Path(value)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_model(cfg: RunConfig, path: Path) -> BiaffineScorer:
    return BiaffineScorer.load(path, expect_profile=cfg.profile)


# -- subcommands ---------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args) -> int:
    out = _output_path(args.out, "output corpus")
    docs = generate_synthetic(args.gen_seed, args.n_docs, cfg.profile_name, flip_rate=args.flip_rate,
                              min_sentences=args.min_sentences, max_sentences=args.max_sentences)
    store_corpus(docs, out)
    print(f"wrote {len(docs)} documents to {out}")
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig, args) -> int:
    corpus = _input_path(cfg.paths.corpus, "corpus")
    out = _output_path(cfg.paths.windows, "window file (--out)")
    prof = get_profile(cfg.profile_name)
    docs = load_corpus(corpus, prof)
    wins, stats = corpus_windows(docs, prof, max_len=cfg.preprocess.max_len,
                                 seed=cfg.preprocess.seed)
    write_windows(out, wins, prof, {"max_len": cfg.preprocess.max_len,
                                    "seed": cfg.preprocess.seed, "documents": len(docs)})
    summary = {"format": "tempograph-preprocess-summary", "version": SUMMARY_VERSION,
               "documents": len(docs), **stats.to_dict()}
    summary_path = Path(args.summary) if args.summary else out.with_name(out.name + ".summary.json")
    _write_json(summary_path, summary)
    if stats.dropped_tlinks:
        logger.warning("%d tlinks span more than two sentences and were dropped",
                       stats.dropped_tlinks)
    if stats.skipped_windows:
        logger.warning("%d windows exceed max_len=%d and were skipped", stats.skipped_windows,
                       cfg.preprocess.max_len)
    print(f"{stats.windows} windows, {stats.dropped_tlinks} dropped tlinks, "
          f"{stats.skipped_windows} skipped windows -> {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    win_path = _input_path(cfg.paths.windows, "window file")
    out_dir = Path(cfg.paths.out_dir or "")
    if not cfg.paths.out_dir:
        raise UsageError("no output directory given (--out-dir or paths.out_dir)")
    wins, prof, _ = read_windows(win_path)
    if cfg.profile is not None and get_profile(cfg.profile) is not prof:
        raise DataError(f"window file profile {prof.name!r} != configured {cfg.profile!r}")
    model_cfg = cfg.model
    vectors = None
    if model_cfg.embedding_mode == "external":
        vocab, vectors = load_vectors(_input_path(cfg.paths.vectors, "vector file"))
        model_cfg.embed_dim = int(vectors.shape[1])
    else:
        vocab = Vocabulary.build(w.tokens for w in wins)
    dev_fn = None
    if cfg.paths.dev:
        dev_docs = load_corpus(_input_path(cfg.paths.dev, "dev corpus"), prof)

        def dev_fn(model):
            preds = predict_documents(model, dev_docs, max_len=cfg.preprocess.max_len,
                                      batch_size=cfg.inference.batch_size,
                                      n_jobs=cfg.inference.n_jobs)
            return evaluate_documents(dev_docs, preds, prof).f1

    model = BiaffineScorer(model_cfg, prof, vocab, seed=cfg.train.seed, vectors=vectors)
    t = cfg.train
    result = train(model, wins, epochs=t.epochs, seed=t.seed, batch_size=t.batch_size,
                   optimizer=cfg.optimizer.state(), resample_masks=t.resample_masks,
                   dev_fn=dev_fn, target_score=t.target_f1, log_every=t.log_every)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"epochs_run": result.epochs_run, "seed": t.seed, "windows": len(wins)}
    model.save(out_dir / "final.ckpt", {**meta, "kind": "final"})
    if result.best_params is not None:
        final = {k: p.data for k, p in model.params.items()}
        for k, p in model.params.items():
            p.data = result.best_params[k]
        model.save(out_dir / "best.ckpt", {**meta, "kind": "best-dev",
                                           "best_epoch": result.best_epoch,
                                           "dev_f1": max(result.dev_scores)})
        for k, p in model.params.items():
            p.data = final[k]
    write_loss_curve(out_dir / "loss_curve.tsv", result.curve)
    _write_json(out_dir / "train_summary.json", {
        "format": "tempograph-train-summary", "version": SUMMARY_VERSION,
        "epochs_run": result.epochs_run, "epoch_losses": result.epoch_losses,
        "dev_scores": result.dev_scores, "best_epoch": result.best_epoch,
        "config": cfg.to_dict(),
    })
    print(f"trained {result.epochs_run} epochs on {len(wins)} windows -> {out_dir}")
    return EXIT_OK


def prediction_records(preds, level: str) -> list[dict]:
    out = []
    for p in preds:
        rec: dict = {"doc_id": p.doc_id}
        if level in ("token", "all"):
            rec["windows"] = [
                {"index": w.index, "first_sentence": w.first_sentence, "tokens": w.tokens,
                 "edges": g.to_list()}
                for w, g in zip(p.windows, p.graphs)
            ]
        if level in ("event", "all") and any(w.event_spans for w in p.windows):
            pairs = p.event_pairs()
            rec["pairs"] = [[a, b, lab.name] for (a, b), lab in sorted(pairs.items())
                            if lab.id != 0]
        out.append(rec)
    return out


def cmd_predict(cfg: RunConfig, args) -> int:
    model = _load_model(cfg, _input_path(cfg.paths.checkpoint, "checkpoint"))
    docs = load_any(_input_path(args.input, "input"), model.profile)
    annotated = bool(docs) and isinstance(docs[0], Document)
    level = args.level
    if level == "event" and not annotated:
        raise DataError("event-level output needs input with event annotations")
    out = _output_path(cfg.paths.predictions, "prediction file (--out)")
    stats = PreprocessStats()
    preds = predict_documents(model, docs, max_len=cfg.preprocess.max_len,
                              batch_size=cfg.inference.batch_size, n_jobs=cfg.inference.n_jobs,
                              stats=stats)
    if stats.skipped_windows:
        logger.warning("%d windows exceed max_len=%d and were skipped", stats.skipped_windows,
                       cfg.preprocess.max_len)
    header = {"format": PREDICTION_FORMAT, "version": PREDICTION_VERSION,
              "profile": model.profile.name, "level": level}
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in prediction_records(preds, level):
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
    print(f"predicted {len(preds)} documents ({stats.windows} windows) -> {out}")
    return EXIT_OK


def read_predictions(path: Path) -> tuple[dict, dict[str, dict]]:
    """Header and per-document event-pair maps of a prediction file."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    try:
        header = json.loads(lines[0]) if lines else {}
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc.msg})") from None
    if header.get("format") != PREDICTION_FORMAT or header.get("version") != PREDICTION_VERSION:
        raise DataError(f"{path}: not a version {PREDICTION_VERSION} prediction file")
    by_doc = {}
    for k, rec in enumerate(records, 2):
        if not isinstance(rec, dict) or "doc_id" not in rec:
            raise DataError(f"{path}:{k}: record without doc_id")
        if rec["doc_id"] in by_doc:
            raise DataError(f"{path}:{k}: duplicate doc_id {rec['doc_id']!r}")
        by_doc[rec["doc_id"]] = {(a, b): lab for a, b, lab in rec.get("pairs", [])}
    return header, by_doc


def cmd_eval(cfg: RunConfig, args) -> int:
    header, by_doc = read_predictions(_input_path(cfg.paths.predictions, "prediction file"))
    prof = get_profile(cfg.profile or header.get("profile", "tbdense"))
    if header.get("profile") != prof.name:
        raise DataError(f"predictions use profile {header.get('profile')!r}, not {prof.name!r}")
    if header.get("level") == "token":
        raise DataError("token-level predictions carry no event pairs; predict with --level event")
    gold = load_corpus(_input_path(cfg.paths.gold, "gold corpus"), prof)
    gold_ids = [d.doc_id for d in gold]
    missing = sorted(set(gold_ids) - set(by_doc))
    extra = sorted(set(by_doc) - set(gold_ids))
    if missing or extra:
        raise DataError(f"documents not aligned: missing predictions {missing[:5]}, "
                        f"unknown documents {extra[:5]}")
    try:
        report = evaluate_event_pairs(gold, by_doc, prof)
    except (ValueError, SchemaError) as exc:
        raise DataError(str(exc)) from None
    table = report.to_table()
    print(table)
    if args.out:
        prefix = _output_path(args.out, "report prefix")
        Path(f"{prefix}.txt").write_text(
            f"# tempograph-eval-report version 1 profile {prof.name}\n{table}\n", encoding="utf-8")
        Path(f"{prefix}.tsv").write_text(
            f"# tempograph-eval-report version 1 profile {prof.name}\n{report.to_tsv()}",
            encoding="utf-8")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    model = _load_model(cfg, _input_path(cfg.paths.checkpoint, "checkpoint"))
    docs = load_any(_input_path(cfg.paths.corpus, "corpus"), model.profile)
    docs = [d.to_raw() if isinstance(d, Document) else d for d in docs]
    b = cfg.bench
    if b.sentences is not None:
        try:
            docs = truncate_sentences(docs, b.sentences)
        except ValueError as exc:
            raise DataError(str(exc)) from None
    report = run_bench(model, docs, repetitions=b.repetitions, warmup=b.warmup,
                       max_len=cfg.preprocess.max_len, batch_size=cfg.inference.batch_size,
                       n_jobs=cfg.inference.n_jobs)
    print(report.summary())
    if args.out:
        _write_json(_output_path(args.out, "bench report"), report.to_dict())
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

# flag dest -> config key
_OVERRIDES = {
    "profile": "profile",
    "corpus": "paths.corpus",
    "windows": "paths.windows",
    "dev": "paths.dev",
    "vectors": "paths.vectors",
    "checkpoint": "paths.checkpoint",
    "out_dir": "paths.out_dir",
    "predictions": "paths.predictions",
    "gold": "paths.gold",
    "max_len": "preprocess.max_len",
    "pre_seed": "preprocess.seed",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "seed": "train.seed",
    "target_f1": "train.target_f1",
    "lr": "optimizer.lr",
    "infer_batch_size": "inference.batch_size",
    "n_jobs": "inference.n_jobs",
    "repetitions": "bench.repetitions",
    "warmup": "bench.warmup",
    "sentences": "bench.sentences",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set model.dropout=0.2")
    common.add_argument("--profile", help="dataset profile (tbdense or matres)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    p = _Parser(prog="tempograph", description="Graph-based biaffine temporal relation extraction")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic annotated corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n-docs", type=int, default=200)
    g.add_argument("--seed", dest="gen_seed", type=int, default=0, help="generator seed")
    g.add_argument("--flip-rate", type=float, default=0.0)
    g.add_argument("--min-sentences", type=int, default=3)
    g.add_argument("--max-sentences", type=int, default=6)

    pp = sub.add_parser("preprocess", parents=[common], help="corpus -> window file")
    pp.add_argument("--corpus")
    pp.add_argument("--out", dest="windows", help="window file to write")
    pp.add_argument("--summary", help="summary JSON (default: <out>.summary.json)")
    pp.add_argument("--max-len", type=int)
    pp.add_argument("--seed", dest="pre_seed", type=int, help="negative-sampling seed")

    t = sub.add_parser("train", parents=[common], help="window file -> checkpoints + loss curve")
    t.add_argument("--windows")
    t.add_argument("--dev", help="annotated dev corpus for best-dev checkpointing")
    t.add_argument("--out-dir")
    t.add_argument("--vectors", help="pretrained vectors for embedding_mode=external")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--target-f1", type=float)
    t.add_argument("--no-arc", action="store_true", help="ablation: no ARC module")
    t.add_argument("--no-biaffine", action="store_true", help="ablation: linear scorers")

    pr = sub.add_parser("predict", parents=[common], help="checkpoint + input -> predictions")
    pr.add_argument("--checkpoint")
    pr.add_argument("--input", required=True, help="raw or annotated documents")
    pr.add_argument("--out", dest="predictions")
    pr.add_argument("--level", choices=("token", "event", "all"), default="all",
                    help="token-pair edges, event-pair labels, or both (default)")
    pr.add_argument("--max-len", type=int)
    pr.add_argument("--batch-size", dest="infer_batch_size", type=int)
    pr.add_argument("--n-jobs", type=int)

    e = sub.add_parser("eval", parents=[common], help="predictions + gold -> report")
    e.add_argument("--predictions")
    e.add_argument("--gold")
    e.add_argument("--out", help="report prefix; writes <prefix>.txt and <prefix>.tsv")

    b = sub.add_parser("bench", parents=[common], help="inference throughput")
    b.add_argument("--checkpoint")
    b.add_argument("--corpus")
    b.add_argument("--repetitions", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--sentences", type=int, help="use the first N sentences of the corpus")
    b.add_argument("--max-len", type=int)
    b.add_argument("--batch-size", dest="infer_batch_size", type=int)
    b.add_argument("--n-jobs", type=int)
    b.add_argument("--out", help="JSON report path")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for assignment in args.set:
        apply_override(cfg, assignment)
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            set_value(cfg, key, value)
    if getattr(args, "no_arc", False):
        cfg.model.use_arc_module = False
    if getattr(args, "no_biaffine", False):
        cfg.model.use_biaffine = False
    return cfg


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"tempograph: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError, PreprocessError, SchemaError, CheckpointError) as exc:
        print(f"tempograph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"tempograph: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"tempograph: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
