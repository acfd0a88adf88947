"""Command-line entry points.

Exit codes: 0 ok, 1 data discrepancy or malformed data, 2 usage or
configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .corpus import (
    CategoryDataset,
    CategoryId,
    FormattingVariant,
    discover,
    format_input,
    load_category,
    validate_against_reference,
)
from .embedder import TOY_BACKEND_ID, EmbeddingBackend, make_backend, registered_backends
from .errors import (
    BackendUnavailable,
    BadLabel,
    BadRow,
    BoundsError,
    CommentClfError,
    EmptyFile,
    MissingColumn,
    VariantMismatch,
)
from .head import SOLVERS
from .metrics import (
    CategoryMetrics,
    EvalReport,
    baseline_table,
    build_report,
    category_metrics,
    confusion,
    format_table,
    plot_report,
    published_scores,
    report_csv,
    score_csv,
)
from .orchestrator import (
    TUNED_HYPERPARAMS,
    ClassifierArtifact,
    Hyperparams,
    SearchSpace,
    artifact_dirname,
    evaluate_artifact,
    few_shot_benchmark,
    train_all,
    tune_hyperparams,
)

logger = logging.getLogger("commentclf")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

PREDICTION_COLUMNS = ["language", "category", "comment_sentence_id", "label", "prediction", "probability"]


class UsageError(CommentClfError):
    pass


@dataclass
class RunConfig:
    """Fully resolved settings of one command; echoed next to its outputs."""

    data_root: str | None = None
    output_root: str | None = None
    backend_id: str = TOY_BACKEND_ID
    backend_dimension: int = 64
    backend_seed: int = 0
    variant: str = FormattingVariant.WITH_CLASSNAME.value
    hyperparams: dict = field(default_factory=TUNED_HYPERPARAMS.to_dict)
    seed: int = 0
    categories: list[str] = field(default_factory=list)
    parallelism: int = 1
    columns: dict[str, str] = field(default_factory=dict)

    def hp(self) -> Hyperparams:
        return Hyperparams.from_dict(self.hyperparams)

    def category_filter(self) -> set[CategoryId]:
        return {CategoryId.parse(c) for c in self.categories}

    def write(self, directory: str | Path, command: str) -> Path:
        path = Path(directory) / f"run_config.{command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"command": command, "package_version": __version__, **asdict(self)}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


_HP_FLAGS = {
    "learning_rate": "learning_rate",
    "epochs": "epochs",
    "head_max_iterations": "head_max_iterations",
    "solver": "solver",
    "pair_iterations": "pair_iterations",
    "batch_size": "batch_size",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the optional config file, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        hp = {**cfg.hyperparams, **raw.pop("hyperparams", {})}
        cfg = replace(cfg, **raw, hyperparams=hp)
    for name in ("data_root", "output_root", "backend_id", "backend_dimension", "backend_seed", "variant", "seed",
                 "parallelism"):  # fmt: skip
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "category", None):
        cfg.categories = list(args.category)
    if getattr(args, "columns", None):
        try:
            cfg.columns = json.loads(args.columns)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--columns must be a JSON object: {exc}") from exc
    hp = dict(cfg.hyperparams)
    for flag, key in _HP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            hp[key] = value
    try:
        cfg.hyperparams = Hyperparams.from_dict(hp).to_dict()
        FormattingVariant(cfg.variant)
        cfg.category_filter()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _backend(cfg: RunConfig) -> EmbeddingBackend:
    if cfg.backend_id == TOY_BACKEND_ID:
        return make_backend(cfg.backend_id, dimension=cfg.backend_dimension, seed=cfg.backend_seed)
    return make_backend(cfg.backend_id)


def _load_datasets(cfg: RunConfig, out=sys.stdout) -> list[CategoryDataset]:
    if not cfg.data_root:
        raise UsageError("--data-root is required")
    root = Path(cfg.data_root)
    if not root.is_dir():
        raise UsageError(f"data root {root} is not a directory")
    wanted = cfg.category_filter()
    found = [(p, c) for p, c in discover(root, cfg.columns or None) if not wanted or c in wanted]
    if not found:
        raise UsageError(f"no categories found under {root}")
    datasets = []
    for path, cat in found:
        ds = load_category(path, cat, cfg.columns or None)
        for w in ds.warnings:
            print(f"warning: {cat}: {w}", file=out)
        datasets.append(ds)
    return datasets


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _emit_report(report: EvalReport, out_dir: Path | None, plot: bool, out=sys.stdout) -> None:
    table = format_table(report)
    print(table, end="", file=out)
    if out_dir is None:
        return
    _write(out_dir / "report.csv", report_csv(report))
    _write(out_dir / "report.txt", table)
    _write(out_dir / "score.csv", score_csv(report))
    if plot:
        try:
            plot_report(report, out_dir / "report.png")
        except ImportError:
            logger.warning("matplotlib is not installed; skipping report.png (pip install 'artifact[plot]')")


# -- commands ---------------------------------------------------------------------------


def cmd_ingest(args, out=sys.stdout) -> int:
    cfg = resolve_config(args)
    datasets = _load_datasets(cfg, out)
    datasets.sort(key=lambda d: d.category)
    print(f"{'category':<24}{'train_pos':>10}{'train_neg':>10}{'test_pos':>10}{'test_neg':>10}{'total':>8}", file=out)
    for ds in datasets:
        c = ds.counts
        print(f"{ds.category.key:<24}{c.train_pos:>10}{c.train_neg:>10}{c.test_pos:>10}{c.test_neg:>10}{c.total:>8}",
              file=out)  # fmt: skip
    problems = validate_against_reference(datasets, require_all=not cfg.categories)
    if problems:
        print(f"{len(problems)} discrepancies against the reference counts:", file=out)
        for p in problems:
            print(f"  {p}", file=out)
        return EXIT_DATA
    print(f"all {len(datasets)} categories match the reference counts", file=out)
    return EXIT_OK


def cmd_train(args, out=sys.stdout) -> int:
    cfg = resolve_config(args)
    if not cfg.output_root:
        raise UsageError("--output-root is required")
    datasets = _load_datasets(cfg, out)
    backend = _backend(cfg)
    out_root = Path(cfg.output_root)
    cfg.write(out_root, "train")
    artifacts = train_all(
        datasets, backend, cfg.hp(), cfg.variant, cfg.seed, out_root / "artifacts", max_workers=cfg.parallelism
    )
    for cat in sorted(artifacts):
        a = artifacts[cat]
        print(f"{cat}: {a.metadata['pair_count']} pairs, final pair loss "
              f"{a.metadata['pair_loss_per_epoch'][-1]:.4f} -> {out_root / 'artifacts' / artifact_dirname(cat)}",
              file=out)  # fmt: skip
    return EXIT_OK


def _read_predictions(directory: Path) -> dict[CategoryId, tuple[list[int], list[int]]]:
    found: dict[CategoryId, tuple[list[int], list[int]]] = {}
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise UsageError(f"no prediction files in {directory}")
    for path in files:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"language", "category", "label", "prediction"} - set(reader.fieldnames or [])
            if missing:
                raise MissingColumn(f"{path}: missing column(s) {sorted(missing)}")
            for row in reader:
                cat = CategoryId(row["language"], row["category"])
                preds, labels = found.setdefault(cat, ([], []))
                try:
                    preds.append(int(row["prediction"]))
                    labels.append(int(row["label"]))
                except ValueError:
                    raise BadLabel(f"{path}: non-integer label/prediction in {row}") from None
    return found


def _write_predictions(path: Path, artifact: ClassifierArtifact, ds: CategoryDataset) -> None:
    probs = artifact.predict_proba_texts([format_input(s, artifact.variant) for s in ds.test])
    preds = artifact.predict_samples(ds.test)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for s, p, pr in zip(ds.test, preds, probs):
            writer.writerow([ds.category.language, ds.category.name, s.id, s.label, int(p), repr(float(pr))])


def cmd_evaluate(args, out=sys.stdout) -> int:
    cfg = resolve_config(args)
    out_dir = Path(cfg.output_root) if cfg.output_root else None
    results: dict[CategoryId, tuple[CategoryMetrics, object]] = {}
    if args.predictions:
        wanted = cfg.category_filter()
        for cat, (preds, labels) in _read_predictions(Path(args.predictions)).items():
            if wanted and cat not in wanted:
                continue
            counts = confusion(preds, labels)
            results[cat] = (category_metrics(counts), counts)
    else:
        if not args.models:
            raise UsageError("evaluate needs --models or --predictions")
        datasets = {d.category: d for d in _load_datasets(cfg, out)}
        model_dirs = sorted(p.parent for p in Path(args.models).rglob("manifest.json"))
        if not model_dirs:
            raise UsageError(f"no artifacts under {args.models}")
        for mdir in model_dirs:
            artifact = ClassifierArtifact.load(mdir)
            ds = datasets.get(artifact.category)
            if ds is None:
                logger.info("no data for %s, skipping", artifact.category)
                continue
            results[artifact.category] = evaluate_artifact(artifact, ds)
            if out_dir is not None:
                _write_predictions(out_dir / "predictions" / f"{artifact_dirname(ds.category)}.csv", artifact, ds)
    if not results:
        raise UsageError("nothing to evaluate")
    report = build_report(results, baseline_table())
    if out_dir is not None:
        cfg.write(out_dir, "evaluate")
    _emit_report(report, out_dir, plot=not args.no_plot, out=out)
    return EXIT_OK


def cmd_report(args, out=sys.stdout) -> int:
    cfg = resolve_config(args)
    if args.published:
        results: dict = dict(published_scores())
        results = {c: CategoryMetrics(s.precision, s.recall, s.f1, s.weighted_f1) for c, s in results.items()}
    elif args.scores:
        results = {}
        with Path(args.scores).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row.get("language") in (None, "", "Average"):
                    continue
                results[CategoryId(row["language"], row["category"])] = CategoryMetrics(
                    float(row["precision"]), float(row["recall"]), float(row["f1"]), float(row["weighted_f1"]),
                    float(row["accuracy"]) if row.get("accuracy") else None,
                )  # fmt: skip
    else:
        raise UsageError("report needs --scores FILE or --published")
    wanted = cfg.category_filter()
    if wanted:
        results = {c: m for c, m in results.items() if c in wanted}
    if not results:
        raise UsageError("no categories to report")
    out_dir = Path(cfg.output_root) if cfg.output_root else None
    if out_dir is not None:
        cfg.write(out_dir, "report")
    _emit_report(build_report(results, baseline_table()), out_dir, plot=not args.no_plot, out=out)
    return EXIT_OK


def _single_dataset(cfg: RunConfig, out) -> CategoryDataset:
    if len(cfg.categories) != 1:
        raise UsageError("exactly one --category is required")
    return _load_datasets(cfg, out)[0]


def cmd_tune(args, out=sys.stdout) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    cfg = resolve_config(args)
    ds = _single_dataset(cfg, out)
    best, history = tune_hyperparams(
        ds, _backend(cfg), SearchSpace(), args.trials, cfg.seed, cfg.variant,
        eval_on_test=args.eval_on_test, template=cfg.hp(),
    )  # fmt: skip
    rows = [[r.index, repr(r.hyperparams.learning_rate), r.hyperparams.epochs, r.hyperparams.head_max_iterations,
             r.hyperparams.solver, repr(r.objective), f"{r.wall_time:.3f}"] for r in history]  # fmt: skip
    header = ["trial", "learning_rate", "epochs", "head_max_iterations", "solver", "f1", "wall_time"]
    for r in rows:
        print(",".join(str(v) for v in r), file=out)
    print(f"best: {best}", file=out)
    if cfg.output_root:
        out_dir = Path(cfg.output_root)
        cfg.write(out_dir, "tune")
        with (out_dir / "trials.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        _write(out_dir / "best_hyperparams.json", json.dumps(best.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_benchmark(args, out=sys.stdout) -> int:
    cfg = resolve_config(args)
    ds = _single_dataset(cfg, out)
    ids = args.backends or [cfg.backend_id]
    backends = [_backend(replace(cfg, backend_id=b)) for b in ids]
    rows = few_shot_benchmark(backends, ds, args.n_per_class, args.epochs, cfg.seed, cfg.variant)
    print(f"{'backend':<36}{'accuracy':>10}{'f1':>8}{'seconds':>10}", file=out)
    for r in rows:
        print(f"{r.backend_id:<36}{r.accuracy:>10.3f}{r.f1:>8.3f}{r.wall_time:>10.2f}", file=out)
    if cfg.output_root:
        out_dir = Path(cfg.output_root)
        cfg.write(out_dir, "benchmark")
        with (out_dir / "benchmark.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["backend_id", "accuracy", "f1", "wall_time"])
            writer.writerows([[r.backend_id, repr(r.accuracy), repr(r.f1), f"{r.wall_time:.3f}"] for r in rows])
    return EXIT_OK


def cmd_classify(args, out=sys.stdout) -> int:
    artifact = ClassifierArtifact.load(args.model)
    items: list[tuple[str, str | None]] = []
    if args.batch:
        fh = sys.stdin if args.batch == "-" else open(args.batch, encoding="utf-8")
        with fh:
            for line in fh:
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                text, tab, cls = line.partition("\t")
                items.append((text, cls if tab else args.classname))
    elif args.sentence:
        items.append((args.sentence, args.classname))
    else:
        raise UsageError("give a sentence or --batch FILE")
    inputs = [text if args.raw else artifact.format(text, cls) for text, cls in items]
    probs = artifact.predict_proba_texts(inputs)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["category", "label", "probability", "input"])
    for inp, p in zip(inputs, probs):
        writer.writerow([artifact.category.key, int(p >= args.threshold), f"{p:.6f}", inp])
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, data: bool = True, output: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    if data:
        p.add_argument("--data-root", dest="data_root", help="directory searched for category CSVs")
        p.add_argument("--category", action="append", help="restrict to LANG/NAME (repeatable)")
        p.add_argument("--columns", help="JSON map from field name to CSV header, e.g. '{\"text\": \"sentence\"}'")
    if output:
        p.add_argument("--output-root", dest="output_root", help="directory for outputs")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", dest="backend_id", help=f"encoder id (registered: {', '.join(registered_backends())})")
    p.add_argument("--dimension", dest="backend_dimension", type=int, help="toy encoder dimension")
    p.add_argument("--backend-seed", dest="backend_seed", type=int)
    p.add_argument("--variant", choices=[v.value for v in FormattingVariant])
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--head-max-iterations", dest="head_max_iterations", type=int)
    p.add_argument("--solver", choices=list(SOLVERS) + ["liblin"])
    p.add_argument("--pair-iterations", dest="pair_iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commentclf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load category CSVs and check them against the reference counts")
    _add_common(p, output=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one classifier per category")
    _add_common(p)
    _add_model(p)
    p.add_argument("--parallelism", type=int, help="categories trained concurrently")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score trained artifacts or stored predictions")
    _add_common(p)
    p.add_argument("--models", help="directory containing artifact directories")
    p.add_argument("--predictions", help="directory of prediction CSVs (" + ",".join(PREDICTION_COLUMNS[:5]) + ")")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render a report from a per-category score CSV")
    _add_common(p, data=False)
    p.add_argument("--category", action="append", help="restrict to LANG/NAME (repeatable)")
    p.add_argument("--scores", help="CSV with language,category,precision,recall,f1,weighted_f1[,accuracy]")
    p.add_argument("--published", action="store_true", help="use the shipped published per-category scores")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("classify", help="classify sentences with a trained artifact")
    p.add_argument("--model", required=True, help="artifact directory")
    p.add_argument("sentence", nargs="?")
    p.add_argument("--classname", help="class or file name the sentence came from")
    p.add_argument("--batch", help="file with one sentence per line ('-' for stdin); 'sentence<TAB>classname' allowed")
    p.add_argument("--raw", action="store_true", help="inputs are already formatted model inputs")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("tune", help="seeded random search over the hyperparameter space")
    _add_common(p)
    _add_model(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--eval-on-test", action="store_true", help="score trials on the test partition")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("benchmark", help="few-shot comparison of base encoders on one category")
    _add_common(p)
    _add_model(p)
    p.add_argument("--backends", nargs="+", help="encoder ids to compare")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=32)
    p.set_defaults(func=cmd_benchmark, epochs=5)
    return parser


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out=out)
    except (UsageError, VariantMismatch, BoundsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingColumn, BadLabel, BadRow, EmptyFile) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendUnavailable as exc:
        print(f"backend unavailable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CommentClfError, OSError, ValueError, RuntimeError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
