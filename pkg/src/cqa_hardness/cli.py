"""Command-line pipeline: split, generate, classify, train, answer, evaluate.

Every subcommand reads an optional JSON config (``--config``) whose section
for that subcommand supplies defaults; explicit flags win.  Outputs are
written atomically and stamped with a manifest naming the exact inputs.
Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from fractions import Fraction
from pathlib import Path

from . import __version__
from .embeddings import (
    CheckpointError,
    FrequencyScorer,
    GraphScorer,
    TrainConfig,
    TrainingDiverged,
    filtered_link_mrr,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .evaluation import (
    EvalRecord,
    PrecomputedRanks,
    stratified_report,
    cardinality_strata,
    imbalance_report,
    imbalance_text,
    pairwise_u_tests,
    pvalue_text,
    strata_text,
)
from .fileio import atomic_write_text, json_hash, sha256_file, write_json
from .generator import GenerationConfig, generate_balanced, generate_training_queries, read_benchmark, write_benchmark
from .hardness import HardnessLabel, NotAnAnswerError, ReductionMatrix, classify, classify_negation
from .kg import SPLIT_FILES, ParseError, file_fingerprint, load_split_dir, load_triples, random_split, temporal_split, write_split_dir
from .matcher import Matcher, answers
from .queries import NEGATION_TYPES, QaPair, QueryFormatError, QueryType, read_queries, write_queries
from .solver import SolverConfig, solve

log = logging.getLogger("cqa_hardness")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# config-file section per subcommand
SECTIONS = {
    "split": "split",
    "gen-train": "training_queries",
    "gen-bench": "generation",
    "classify": "classification",
    "stats": "stats",
    "train-lp": "link_predictor",
    "answer": "solver",
    "evaluate": "evaluation",
    "report": "report",
}
GLOBAL_KEYS = {"seed", "threads"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _types(text: str) -> list[QueryType]:
    try:
        return [QueryType(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ratios(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("ratios must be comma-separated numbers") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three ratios")
    return vals


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _split_inputs(split_dir) -> dict:
    d = Path(split_dir)
    return {str(d / name): sha256_file(d / name) for name in SPLIT_FILES}


def _split_fingerprint(split_dir) -> str:
    d = Path(split_dir)
    return file_fingerprint(*(d / name for name in SPLIT_FILES))


def _check_expected(args) -> None:
    path = getattr(args, "expect_manifest", None)
    if not path:
        return
    manifest = json.loads(Path(path).read_text())
    expected = manifest.get("split_fingerprint")
    actual = _split_fingerprint(args.split_dir)
    if expected != actual:
        raise DataError(f"split fingerprint mismatch: manifest {path} has {expected}, {args.split_dir} hashes to {actual}")


def _manifest(args, inputs: dict, outputs: list, extra: dict | None = None) -> dict:
    resolved = {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v))
                for k, v in sorted(vars(args).items()) if k not in ("func", "config_data")}
    out = {
        "tool": "cqa-hardness",
        "version": __version__,
        "command": args.command,
        "args": resolved,
        "config_hash": json_hash(resolved),
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    out.update(extra or {})
    return out


def _write_manifest(path, manifest: dict) -> None:
    write_json(path, manifest)


def _load_split(args):
    _check_expected(args)
    return load_split_dir(args.split_dir)


def _query_answer_sets(query, ans: dict, split) -> tuple[list[int], frozenset]:
    """Hard answers to score and every known answer of a query record."""
    if "hard" in ans:
        hard = list(ans["hard"])
        known = frozenset(ans.get("full", [])) | frozenset(ans.get("easy", [])) | frozenset(hard)
        return hard, known
    full = answers(query, split.full)
    train_ans = answers(query, split.train)
    hard = sorted(full if query.has_negation else full - train_ans)
    return hard, frozenset(full)


# -------------------------------------------------------------- commands


def cmd_split(args) -> None:
    out = Path(args.out)
    if args.timestamped:
        timed, symbols = load_triples(args.timestamped, timestamped=True)
        split = temporal_split(timed, args.ratios, symbols)
        src = args.timestamped
    elif args.triples:
        triples, symbols = load_triples(args.triples)
        split = random_split(triples, symbols.entity_count, symbols.relation_count, args.ratios, args.seed, symbols)
        src = args.triples
    else:
        raise UsageError("split: one of --timestamped or --triples is required")
    write_split_dir(split, out)
    files = [out / n for n in (*SPLIT_FILES, "entities.dict", "relations.dict")]
    _write_manifest(out / "manifest.json", _manifest(args, {str(src): sha256_file(src)}, files, {
        "split_fingerprint": _split_fingerprint(out),
        "sizes": {"train": len(split.train), "valid": len(split.valid), "test": len(split.test)},
    }))
    log.info("split %s: train %d, valid %d, test %d", src, len(split.train), len(split.valid), len(split.test))


def cmd_gen_train(args) -> None:
    split = _load_split(args)
    items = generate_training_queries(split, args.n, args.types, seed=args.seed)
    write_queries(args.out, items)
    counts = Counter(q.type.value for q, _ in items)
    _write_manifest(f"{args.out}.manifest.json", _manifest(args, _split_inputs(args.split_dir), [args.out], {
        "split_fingerprint": _split_fingerprint(args.split_dir), "counts": dict(sorted(counts.items()))}))


def cmd_gen_bench(args) -> None:
    split = _load_split(args)
    config = GenerationConfig(
        quota_per_bucket=args.quota,
        anchor_cap_fraction=Fraction(str(args.cap)),
        relation_cap_fraction=Fraction(str(args.relation_cap if args.relation_cap is not None else args.cap)),
        seed=args.seed,
        types=tuple(args.types),
        max_attempts=args.max_attempts,
        union_rule=args.union_rule,
    )
    bench = generate_balanced(split, config)
    bench.split_fingerprint = _split_fingerprint(args.split_dir)
    write_benchmark(bench, args.out_dir, inputs=_split_inputs(args.split_dir))
    if bench.shortfall:
        log.warning("shortfall: %s", bench.shortfall)


def cmd_classify(args) -> None:
    split = _load_split(args)
    records = read_queries(args.queries)
    lines = []
    for idx, (query, ans) in enumerate(records):
        m = Matcher(query, split)
        targets = ans["hard"] if "hard" in ans else sorted(m.answers())
        for t in targets:
            qa = QaPair(query, t)
            try:
                if query.type in NEGATION_TYPES:
                    label, neg = classify_negation(qa, split)
                else:
                    label, neg = classify(qa, split, args.union_rule, matcher=m), None
            except NotAnAnswerError as exc:
                raise DataError(f"query {idx}: {exc}") from None
            row = {"query": idx, "type": query.type.value, "answer": int(t), "label": str(label)}
            if neg is not None:
                row["negative_tree"] = neg
            lines.append(json.dumps(row, sort_keys=True))
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    inputs = {**_split_inputs(args.split_dir), str(args.queries): sha256_file(args.queries)}
    _write_manifest(f"{args.out}.manifest.json", _manifest(args, inputs, [args.out], {
        "split_fingerprint": _split_fingerprint(args.split_dir)}))


def _read_labels(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_stats(args) -> None:
    matrix = ReductionMatrix()
    for row in _read_labels(args.labels):
        try:
            matrix.add(QueryType(row["type"]), HardnessLabel.parse(row["label"]))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{args.labels}: bad label row {row}: {exc}") from None
    if args.format == "csv":
        text = matrix.to_csv()
    elif args.format == "json":
        text = json.dumps({t.value: {"row": matrix.row(t), "skipped": dict(matrix.skipped.get(t, {}))}
                           for t in matrix.rows()}, indent=2, sort_keys=True) + "\n"
    else:
        text = matrix.to_text()
    if args.out:
        atomic_write_text(args.out, text)
        _write_manifest(f"{args.out}.manifest.json",
                        _manifest(args, {str(args.labels): sha256_file(args.labels)}, [args.out]))
    else:
        sys.stdout.write(text)


def cmd_train_lp(args) -> None:
    split = _load_split(args)
    config = TrainConfig(rank=args.rank, learning_rate=args.lr, regularization=args.reg,
                         batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    model, history = train(split.train, config)
    valid_mrr = filtered_link_mrr(model, split.valid.triples, split.full) if len(split.valid) else None
    digest = save_checkpoint(model, args.out, hyperparameters=vars(config))
    _write_manifest(f"{args.out}.manifest.json", _manifest(args, _split_inputs(args.split_dir), [args.out], {
        "split_fingerprint": _split_fingerprint(args.split_dir),
        "payload_sha256": digest,
        "final_loss": history.epoch_losses[-1] if history.epoch_losses else history.initial_loss,
        "valid_filtered_mrr": valid_mrr,
    }))
    log.info("trained rank-%d model, validation MRR %s", args.rank, valid_mrr)


def _scorer(args, split):
    if args.oracle:
        return GraphScorer(split.full), "oracle"
    if args.frequency:
        return FrequencyScorer(split.train), "frequency"
    if not args.checkpoint:
        raise UsageError("answer: --checkpoint is required unless --oracle or --frequency is given")
    model, header = load_checkpoint(args.checkpoint)
    if model.entity_count != split.entity_count or model.relation_count != split.relation_count:
        raise DataError("checkpoint dimensions do not match the split")
    return model, header["sha256"]


def _query_sources(path) -> list[tuple[str, Path]]:
    path = Path(path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        return [(name, path / name) for name in sorted(manifest["files"])]
    return [(path.name, path)]


def cmd_answer(args) -> None:
    split = _load_split(args)
    scorer, scorer_id = _scorer(args, split)
    config = SolverConfig(beam_k=args.beam, tnorm=args.tnorm, hybrid=args.hybrid)
    lines = []
    inputs = dict(_split_inputs(args.split_dir))
    for source, file in _query_sources(args.queries):
        inputs[str(file)] = sha256_file(file)
        for idx, (query, ans) in enumerate(read_queries(file)):
            ranking = solve(query, scorer, config, train=split.train if args.hybrid else None)
            hard, known = _query_answer_sets(query, ans, split)
            row = {
                "source": source,
                "query": idx,
                "type": query.type.value,
                "top": [[e, round(s, 12)] for e, s in ranking.top(args.top)],
                "ranks": {
                    "filtered": {str(t): ranking.rank(t, exclude=known) for t in hard},
                    "raw": {str(t): ranking.rank(t) for t in hard},
                },
            }
            lines.append(json.dumps(row, sort_keys=True))
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    _write_manifest(f"{args.out}.manifest.json", _manifest(args, inputs, [args.out], {
        "scorer": scorer_id, "split_fingerprint": _split_fingerprint(args.split_dir)}))


class _RankTable:
    """Rankings file indexed by (source file, query index); behaves like a
    Ranking whose ranks were precomputed."""

    def __init__(self, path, filtering: bool):
        self.rows = {}
        key = "filtered" if filtering else "raw"
        for row in _read_labels(path):
            self.rows[(row["source"], row["query"])] = {int(t): r for t, r in row["ranks"][key].items()}

    def get(self, source: str, idx: int) -> dict[int, float]:
        try:
            return self.rows[(source, idx)]
        except KeyError:
            raise DataError(f"rankings file has no entry for query {idx} of {source}") from None


def _benchmark_records(bench_dir, rank_table: _RankTable):
    """Records keyed by (bucket file, line): one query may sit in several
    bucket files."""
    records, rankings = [], {}
    for source, file in _query_sources(bench_dir):
        tag = source.split(".")[1]
        label = HardnessLabel("full") if tag == "full" else HardnessLabel("partial", QueryType(tag))
        for idx, (query, ans) in enumerate(read_queries(file)):
            hard = tuple(ans.get("hard", ()))
            known = frozenset(ans.get("full", ())) | frozenset(ans.get("easy", ())) | frozenset(hard)
            records.append(EvalRecord(query, label, hard, known, key=(source, idx)))
            rankings[(source, idx)] = PrecomputedRanks(rank_table.get(source, idx))
    return records, rankings


def cmd_evaluate(args) -> None:
    table = _RankTable(args.rankings, args.filtering)
    records, rankings = _benchmark_records(args.benchmark, table)
    report = stratified_report(records, rankings, filtering=args.filtering)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    atomic_write_text(out / "report.csv", report.to_csv())
    atomic_write_text(out / "report.txt", report.to_text())
    inputs = {str(args.rankings): sha256_file(args.rankings),
              str(Path(args.benchmark) / "manifest.json"): sha256_file(Path(args.benchmark) / "manifest.json")}
    _write_manifest(out / "manifest.json", _manifest(args, inputs, [out / "report.json", out / "report.csv",
                                                                   out / "report.txt"]))
    sys.stdout.write(report.to_text())


def cmd_report(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [qa for qa, _, _ in read_benchmark(args.benchmark)]
    inputs = {str(Path(args.benchmark) / "manifest.json"): sha256_file(Path(args.benchmark) / "manifest.json")}
    split = None
    names = {}
    if args.split_dir:
        split = _load_split(args)
        inputs.update(_split_inputs(args.split_dir))
        names = {"entity_name": lambda e: split.symbols.entities[e],
                 "relation_name": lambda r: split.symbols.relations[r]}
    imbalance = imbalance_report(pairs)
    sections = ["Most frequent anchor and relation per type (% of QA pairs)\n", imbalance_text(imbalance, **names)]
    outputs = []
    if args.rankings:
        table = _RankTable(args.rankings, args.filtering)
        records, rankings = _benchmark_records(args.benchmark, table)
        inputs[str(args.rankings)] = sha256_file(args.rankings)
        report = stratified_report(records, rankings, filtering=args.filtering)
        by_type: dict = {}
        for (t, bucket), cell in report.cells.items():
            by_type.setdefault(t, {})[bucket] = cell.rr
        for t in report.types():
            groups = by_type[t]
            names = sorted(groups, key=lambda b: list(QueryType).index(QueryType(b)))
            sections += [f"\n{t.value}: bucket-vs-bucket tests\n", pvalue_text(pairwise_u_tests(groups), names)]
        if split is not None:
            strata = cardinality_strata(records, rankings, split.train, filtering=args.filtering)
            sections += ["\nMRR by intermediate cardinality\n", strata_text(strata)]
    text = "".join(sections)
    atomic_write_text(out / "report.txt", text)
    outputs.append(out / "report.txt")
    _write_manifest(out / "manifest.json", _manifest(args, inputs, outputs))
    sys.stdout.write(text)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cqa-hardness", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; its section for this command supplies defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="accepted for compatibility; work is single-threaded")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    def split_dir(p):
        p.add_argument("--split-dir", required=True)
        p.add_argument("--expect-manifest", help="fail if the split differs from the one recorded here")

    p = add("split", cmd_split, "split a triple file into train/valid/test")
    p.add_argument("--timestamped", help="TSV with an ISO-8601 date or integer time column")
    p.add_argument("--triples", help="plain TSV triples, split uniformly at random with --seed")
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--out", required=True)

    p = add("gen-train", cmd_gen_train, "generate training queries answered on the train graph")
    split_dir(p)
    p.add_argument("--n", type=int, default=1000, help="queries per non-1p type")
    p.add_argument("--types", type=_types, default=None)
    p.add_argument("--out", required=True)

    p = add("gen-bench", cmd_gen_bench, "generate a hardness-balanced test benchmark")
    split_dir(p)
    p.add_argument("--quota", type=int, default=100)
    p.add_argument("--cap", type=float, default=0.2, help="max share of one anchor (and relation) per bucket")
    p.add_argument("--relation-cap", type=float, default=None)
    p.add_argument("--types", type=_types, default=list(QueryType))
    p.add_argument("--max-attempts", type=int, default=10_000_000)
    p.add_argument("--union-rule", choices=("any_nonexistent", "require_missing"), default="any_nonexistent")
    p.add_argument("--out-dir", required=True)

    p = add("classify", cmd_classify, "label QA pairs trivial / partial / full")
    split_dir(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--union-rule", choices=("any_nonexistent", "require_missing"), default="any_nonexistent")
    p.add_argument("--out", required=True)

    p = add("stats", cmd_stats, "reduction matrix from a labels file")
    p.add_argument("--labels", required=True)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out")

    p = add("train-lp", cmd_train_lp, "train a ComplEx link predictor")
    split_dir(p)
    p.add_argument("--rank", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--reg", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--out", required=True)

    p = add("answer", cmd_answer, "rank entities for every query with beam search")
    split_dir(p)
    p.add_argument("--queries", required=True, help="query file or benchmark directory")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="score full-graph edges 1 and all else 0")
    p.add_argument("--frequency", action="store_true", help="use the relation/object frequency baseline")
    p.add_argument("--beam", type=int, default=64)
    p.add_argument("--tnorm", choices=("prod", "min"), default="prod")
    p.add_argument("--hybrid", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "stratified MRR report for a benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--rankings", required=True)
    p.add_argument("--filtering", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--out-dir", required=True)

    p = add("report", cmd_report, "imbalance, significance and cardinality tables")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--rankings")
    p.add_argument("--split-dir")
    p.add_argument("--expect-manifest")
    p.add_argument("--filtering", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--out-dir", required=True)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(data) - GLOBAL_KEYS - set(SECTIONS.values())
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    defaults = {k: data[k] for k in GLOBAL_KEYS if k in data}
    section = data.get(SECTIONS[args.command], {})
    if not isinstance(section, dict):
        raise UsageError(f"config section {SECTIONS[args.command]!r} must be an object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions}
    bad = {k for k in section if k.replace("-", "_") not in dests}
    if bad:
        raise UsageError(f"unknown keys in config section {SECTIONS[args.command]!r}: {sorted(bad)}")
    defaults.update({k.replace("-", "_"): v for k, v in section.items()})
    for action in sub._actions:
        if action.dest in defaults and action.type is not None and isinstance(defaults[action.dest], str):
            defaults[action.dest] = action.type(defaults[action.dest])
    if "types" in defaults and isinstance(defaults["types"], list):
        defaults["types"] = [QueryType(t) for t in defaults["types"]]
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "types", "") is None:
        from .generator import TRAINING_TYPES
        args.types = list(TRAINING_TYPES)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, QueryFormatError, CheckpointError, TrainingDiverged,
            FileNotFoundError, NotAnAnswerError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - reported, not hidden
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
