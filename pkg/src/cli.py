"""Command-line entry point: python -m src.cli <subcommand> [flags]."""

import sys
import json
import logging
import argparse
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, TextIO

from src.config import Config, ContrastiveConfig, EncoderConfig
from src.cost_model import (
    REFERENCE_LATENCY_POINTS,
    REFERENCE_PIPELINES,
    TRADEOFF_COLUMNS,
    CostScenario,
    compression_whatif,
    fit_latency_model,
    pipeline_tradeoff_report,
    read_scenarios,
    storage_estimate,
)
from src.encoder import encode_corpus, encode_pooled, encode_text, image_view, read_text_corpus
from src.evaluation import (
    EvaluationReport,
    RunFile,
    compare_reports,
    comparison_text,
    load_qrels,
    load_run,
    ndcg_at_k,
    write_run,
)
from src.index_store import CorpusIndex, build_index, index_stats, search_many
from src.interchange import dumps_record, load_embedding_file, lookup, read_training_pairs, write_embeddings
from src.scoring import PooledVector, Pooling, SimilarityKind, pool
from src.synthetic import distractor_corpus, synthetic_training_pairs, write_distractor_corpus
from src.training import LinearHead, TrainingDivergedError, mine_hard_negatives, train_demo

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_DIVERGED = 5


class FlagError(ValueError):
    """A flag carries an invalid value."""

    def __init__(self, flag: str, value: Any, reason: str = ""):
        self.flag = flag
        self.value = value
        super().__init__(f"invalid value for {flag}: {value!r}" + (f" ({reason})" if reason else ""))


def _require(condition: bool, flag: str, value: Any, reason: str = "") -> None:
    if not condition:
        raise FlagError(flag, value, reason)


@contextmanager
def _output(path: Optional[str], mode: str = "w") -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
    else:
        with open(path, mode, encoding="utf-8") as f:
            yield f


def _emit(args: argparse.Namespace, payload: Any, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(text)


def _encoder_config(args: argparse.Namespace, config: Config) -> EncoderConfig:
    dim = args.dim if args.dim is not None else config.encoder.dim
    seed = args.seed if args.seed is not None else config.encoder.seed
    max_tokens = args.max_tokens if args.max_tokens is not None else config.encoder.max_tokens
    _require(dim >= 2, "--dim", dim, "must be >= 2")
    _require(max_tokens >= 1, "--max-tokens", max_tokens, "must be >= 1")
    _require(0 <= seed < 2 ** 64, "--seed", seed, "must be a 64-bit unsigned integer")
    return EncoderConfig(dim=dim, seed=seed, max_tokens=max_tokens)


def _contrastive_config(args: argparse.Namespace, config: Config) -> ContrastiveConfig:
    tau = args.tau if args.tau is not None else config.contrastive.tau
    k = args.negatives if args.negatives is not None else config.contrastive.k_negatives
    threshold = args.threshold if args.threshold is not None else config.contrastive.percentage_threshold
    _require(tau > 0, "--tau", tau, "must be > 0")
    _require(k >= 0, "--negatives", k, "must be >= 0")
    _require(0 < threshold <= 1, "--threshold", threshold, "must be in (0, 1]")
    return ContrastiveConfig(tau=tau, k_negatives=k, percentage_threshold=threshold)


def _kind(args: argparse.Namespace, config: Config) -> SimilarityKind:
    return SimilarityKind(args.kind or config.index.kind)


def cmd_encode(args: argparse.Namespace, config: Config) -> int:
    """Embed an id<TAB>text corpus into the interchange format."""
    cfg = _encoder_config(args, config)
    with open(args.corpus, "r", encoding="utf-8") as f:
        lines = f.readlines()
    if args.modality == "image":
        reps = [image_view(text, cfg, id=doc_id) for doc_id, text in read_text_corpus(lines)]
        if args.pooling:
            reps = [pool(m, Pooling(args.pooling)) for m in reps]
    else:
        reps = list(encode_corpus(lines, cfg, Pooling(args.pooling) if args.pooling else None))
    with _output(args.output) as out:
        count = write_embeddings(reps, out)
    logger.info(f"Wrote {count} records")
    return EXIT_OK


def cmd_index(args: argparse.Namespace, config: Config) -> int:
    """Build and save a corpus index."""
    mode = args.mode or config.index.mode
    precision = args.precision or config.index.precision
    records = load_embedding_file(args.embeddings)
    index = build_index(records, mode, precision)
    size = index.save(args.output)
    stats = index_stats(index)
    _emit(args, stats.to_dict(), f"indexed {stats.doc_count} documents ({size} bytes) -> {args.output}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, config: Config) -> int:
    stats = index_stats(CorpusIndex.load(args.index))
    text = "\n".join(f"{key:<18}{value}" for key, value in stats.to_dict().items())
    _emit(args, stats.to_dict(), text)
    return EXIT_OK


def cmd_search(args: argparse.Namespace, config: Config) -> int:
    """Exact top-k search for every query record."""
    _require(args.k >= 1, "--k", args.k, "must be >= 1")
    index = CorpusIndex.load(args.index)
    queries = load_embedding_file(args.queries)
    results = search_many(index, queries, args.k, _kind(args, config), workers=args.workers or config.index.workers)
    if args.run:
        run = RunFile(
            rankings={q.id: [(r.doc_id, r.score) for r in hits] for q, hits in zip(queries, results)},
            tag=args.tag,
        )
        with _output(args.run) as out:
            write_run(run, out)
    payload = {q.id: [r.to_dict() for r in hits] for q, hits in zip(queries, results)}
    text = "\n".join(
        f"{q.id}\t{r.rank}\t{r.doc_id}\t{r.score:.6f}" for q, hits in zip(queries, results) for r in hits
    )
    _emit(args, payload, text)
    return EXIT_OK


def _report_from_run(qrels_path: str, run_path: str, k: int, gain: str) -> EvaluationReport:
    with open(qrels_path, "r", encoding="utf-8") as f:
        qrels = load_qrels(f)
    with open(run_path, "r", encoding="utf-8") as f:
        run = load_run(f)
    return EvaluationReport(tag=run.tag, result=ndcg_at_k(qrels, run, k, gain), run=run)


def cmd_eval(args: argparse.Namespace, config: Config) -> int:
    """nDCG@k of a TREC run against qrels."""
    k = args.k if args.k is not None else config.eval.k
    _require(k >= 1, "--k", k, "must be >= 1")
    report = _report_from_run(args.qrels, args.run, k, args.gain or config.eval.gain)
    _emit(args, report.to_dict(), report.to_text())
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, config: Config) -> int:
    """Side-by-side nDCG of several runs over the same queries."""
    k = args.k if args.k is not None else config.eval.k
    _require(k >= 1, "--k", k, "must be >= 1")
    gain = args.gain or config.eval.gain
    reports = [_report_from_run(args.qrels, path, k, gain) for path in args.run]
    comparison = compare_reports(reports)
    _emit(args, comparison, comparison_text(comparison))
    return EXIT_OK


def cmd_mine(args: argparse.Namespace, config: Config) -> int:
    """Attach hard negatives to every training pair."""
    cfg = _contrastive_config(args, config)
    encoder_cfg = _encoder_config(args, config)
    kind = _kind(args, config)
    with open(args.pairs, "r", encoding="utf-8") as f:
        pairs = read_training_pairs(f)
    documents = load_embedding_file(args.documents)
    by_id = lookup(documents)
    pooled = all(isinstance(d, PooledVector) for d in documents)
    with _output(args.output) as out:
        for pair in pairs:
            _require(pair.positive_id in by_id, "--pairs", pair.positive_id, "positive id not in --documents")
            lookup(documents, pair.negative_ids)
            query = encode_pooled(pair.query, encoder_cfg) if pooled else encode_text(pair.query, encoder_cfg)
            mined = mine_hard_negatives(query, by_id[pair.positive_id], documents, cfg, kind)
            out.write(dumps_record({
                "query": pair.query,
                "positive_id": pair.positive_id,
                "negative_ids": [m.id for m in mined],
            }) + "\n")
    return EXIT_OK


def cmd_train_demo(args: argparse.Namespace, config: Config) -> int:
    """Two-stage contrastive training of a linear head on synthetic pairs."""
    cfg = _contrastive_config(args, config)
    encoder_cfg = _encoder_config(args, config)
    settings = config.training
    epochs = args.epochs if args.epochs is not None else settings.epochs
    lr = args.lr if args.lr is not None else settings.learning_rate
    n_pairs = args.pairs if args.pairs is not None else settings.pairs_per_stage
    batch_size = args.batch_size if args.batch_size is not None else settings.batch_size
    out_dim = args.out_dim if args.out_dim is not None else settings.out_dim
    _require(epochs >= 0, "--epochs", epochs, "must be >= 0")
    _require(lr >= 0, "--lr", lr, "must be >= 0")
    _require(n_pairs >= 2, "--pairs", n_pairs, "must be >= 2")
    _require(batch_size >= 1, "--batch-size", batch_size, "must be >= 1")
    _require(out_dim >= 1, "--out-dim", out_dim, "must be >= 1")
    seed = encoder_cfg.seed

    stage1 = synthetic_training_pairs(n_pairs, seed, "text", prefix="s1-")
    stage2 = synthetic_training_pairs(n_pairs, seed + 1, "mixed", prefix="s2-")
    head = LinearHead.random(encoder_cfg.dim, out_dim, seed)
    report = train_demo(stage1, stage2, head, cfg, epochs, lr, seed, encoder_cfg=encoder_cfg,
                        batch_size=batch_size, kind=_kind(args, config), warm_start=not args.cold_start)
    if args.summary:
        with _output(args.summary) as out:
            out.write(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    _emit(args, report.to_dict(), "\n".join(report.log_lines()))
    return EXIT_OK


def _scenario_from_flags(args: argparse.Namespace) -> CostScenario:
    _require(args.seq > 0, "--seq", args.seq, "must be > 0")
    _require(args.dim > 0, "--dim", args.dim, "must be > 0")
    _require(args.docs >= 0, "--docs", args.docs, "must be >= 0")
    return CostScenario(sequence_length=args.seq, dim=args.dim, precision=args.precision,
                        corpus_size=args.docs, rerank_depth=args.rerank_depth)


def cmd_estimate(args: argparse.Namespace, config: Config) -> int:
    """Storage needed for a corpus of embedded documents."""
    estimate = storage_estimate(_scenario_from_flags(args))
    _emit(args, estimate.to_dict(), estimate.gb_display)
    return EXIT_OK


def cmd_whatif(args: argparse.Namespace, config: Config) -> int:
    scenario = _scenario_from_flags(args)
    if args.projection_dim is not None:
        _require(1 <= args.projection_dim <= scenario.dim, "--projection-dim", args.projection_dim,
                 f"must be in [1, {scenario.dim}]")
    _require(args.factor >= 1, "--factor", args.factor, "must be >= 1")
    report = compression_whatif(scenario, args.projection_dim, args.factor, args.to_precision, args.to_seq)
    data = report.to_dict()
    text = (f"{data['before']['gib']:.1f} GB -> {data['after']['gib']:.1f} GB "
            f"(saves {data['savings_percent']:.1f}%)")
    _emit(args, data, text)
    return EXIT_OK


def _parse_point(raw: str):
    try:
        x, y = raw.split(":")
        return float(x), float(y)
    except ValueError:
        raise FlagError("--point", raw, "expected CANDIDATES:MS")


def _latency_model(args: argparse.Namespace):
    points = [_parse_point(p) for p in args.point] if args.point else list(REFERENCE_LATENCY_POINTS)
    _require(len({x for x, _ in points}) >= 2, "--point", args.point, "need two distinct candidate counts")
    return fit_latency_model(points)


def cmd_fit_latency(args: argparse.Namespace, config: Config) -> int:
    model = _latency_model(args)
    data = model.to_dict()
    text = f"latency_ms = {model.base_ms:.2f} + {model.per_candidate_ms:.4f} * candidates"
    if args.predict is not None:
        data["prediction_ms"] = model.predict(args.predict)
        text += f"\npredicted({args.predict}) = {data['prediction_ms']:.1f} ms"
    _emit(args, data, text)
    return EXIT_OK


def cmd_tradeoff(args: argparse.Namespace, config: Config) -> int:
    if args.scenarios:
        with open(args.scenarios, "r", encoding="utf-8") as f:
            scenarios = read_scenarios(f)
    else:
        scenarios = list(REFERENCE_PIPELINES)
    table = pipeline_tradeoff_report(scenarios, _latency_model(args))
    if args.sort:
        table = table.sorted_by(args.sort, descending=args.descending)
    _emit(args, table.to_dict(), table.to_text())
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, config: Config) -> int:
    paths = write_distractor_corpus(distractor_corpus(), args.output_dir)
    _emit(args, paths, "\n".join(f"{name}: {path}" for name, path in paths.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--log-level", default=None, help="Logging level (default from config)")
    common.add_argument("--format", choices=("json", "text"), default="text")
    common.add_argument("--seed", type=int, default=None, help="Single source of randomness")

    encoder = argparse.ArgumentParser(add_help=False)
    encoder.add_argument("--dim", type=int)
    encoder.add_argument("--max-tokens", type=int)

    contrastive = argparse.ArgumentParser(add_help=False)
    contrastive.add_argument("--tau", type=float)
    contrastive.add_argument("--negatives", type=int, help="K hard negatives per pair")
    contrastive.add_argument("--threshold", type=float, help="Percentage-to-positive threshold")
    contrastive.add_argument("--kind", choices=[k.value for k in SimilarityKind])

    scenario = argparse.ArgumentParser(add_help=False)
    scenario.add_argument("--seq", type=float, required=True, help="Mean token embeddings per document")
    scenario.add_argument("--dim", type=int, required=True)
    scenario.add_argument("--precision", choices=("fp32", "fp16", "int8", "bit1"), default="fp16")
    scenario.add_argument("--docs", type=int, default=1_000_000)
    scenario.add_argument("--rerank-depth", type=int)

    latency = argparse.ArgumentParser(add_help=False)
    latency.add_argument("--point", action="append", help="CANDIDATES:MS observation (repeatable)")

    parser = argparse.ArgumentParser(prog="lirw", description="Late-interaction retrieval workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common, encoder], help="Embed a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output")
    p.add_argument("--pooling", choices=[m.value for m in Pooling])
    p.add_argument("--modality", choices=("text", "image"), default="text")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", parents=[common], help="Build an index from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("multi_vector", "pooled", "binary"))
    p.add_argument("--precision", choices=("fp32", "fp16", "int8", "bit1"))
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("stats", parents=[common], help="Index statistics")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("search", parents=[common], help="Exact top-k search")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="Query embeddings file")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--kind", choices=[k.value for k in SimilarityKind])
    p.add_argument("--run", help="Write a TREC run file")
    p.add_argument("--tag", default="lirw")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="nDCG@k of a run")
    p.add_argument("--qrels", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--gain", choices=("exponential", "linear"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="Compare several runs")
    p.add_argument("--qrels", required=True)
    p.add_argument("--run", required=True, action="append")
    p.add_argument("--k", type=int)
    p.add_argument("--gain", choices=("exponential", "linear"))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mine", parents=[common, encoder, contrastive], help="Mine hard negatives")
    p.add_argument("--pairs", required=True)
    p.add_argument("--documents", required=True, help="Document embeddings file")
    p.add_argument("--output")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train-demo", parents=[common, encoder, contrastive], help="Two-stage training demo")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--pairs", type=int, help="Synthetic pairs per stage")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out-dim", type=int)
    p.add_argument("--cold-start", action="store_true", help="Start stage 2 from the initial head")
    p.add_argument("--summary", help="Write the JSON summary here")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("estimate", parents=[common, scenario], help="Storage estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("whatif", parents=[common, scenario], help="Compression what-if")
    p.add_argument("--projection-dim", type=int)
    p.add_argument("--factor", type=int, default=1, help="Late pooling factor")
    p.add_argument("--to-precision", choices=("fp32", "fp16", "int8", "bit1"))
    p.add_argument("--to-seq", type=float, help="Explicit target sequence length")
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("fit-latency", parents=[common, latency], help="Fit the reranker latency model")
    p.add_argument("--predict", type=float)
    p.set_defaults(func=cmd_fit_latency)

    p = sub.add_parser("tradeoff", parents=[common, latency], help="Storage/latency trade-off table")
    p.add_argument("--scenarios", help="JSON-lines scenario file (default: reference pipelines)")
    p.add_argument("--sort", choices=TRADEOFF_COLUMNS)
    p.add_argument("--descending", action="store_true")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("synth", parents=[common], help="Write the token-distractor corpus")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    try:
        config = Config(config_file=args.config, load_env=False)
        if args.log_level:
            config.logging.log_level = args.log_level
        config.validate()
        logging.basicConfig(
            level=config.logging.log_level.upper(),
            format=config.logging.log_format,
            stream=sys.stderr,
        )
        return args.func(args, config)
    except TrainingDivergedError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except ValueError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
