"""Per-category training, evaluation, model selection and hyperparameter search."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .corpus import CategoryDataset, CategoryId, CommentSample, FormattingVariant, format_input, format_text
from .embedder import EmbeddingBackend, FineTuneConfig, backend_class, encode, fine_tune
from .errors import (
    ArtifactError,
    BoundsError,
    CategoryMismatch,
    InsufficientSamples,
    SingleClassInput,
    VariantMismatch,
)
from .head import SOLVERS, HeadConfig, HeadModel, canonical_solver, predict, predict_proba, train_head
from .metrics import CategoryMetrics, ConfusionCounts, category_metrics, confusion
from .pairgen import PairGenConfig, generate_pairs

logger = logging.getLogger(__name__)

ARTIFACT_FORMAT = "commentclf-artifact"
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    """Pipeline settings. Defaults are the tuned values of the published run.

    Only the first four fields are searched by :func:`tune_hyperparams`.
    """

    learning_rate: float = 1.71e-05
    epochs: int = 6
    head_max_iterations: int = 241
    solver: str = "lbfgs"
    pair_iterations: int = 20
    batch_size: int = 16
    head_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "solver", canonical_solver(self.solver))
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        for name in ("epochs", "head_max_iterations", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pair_iterations < 1:
            raise ValueError(f"pair_iterations must be >= 1, got {self.pair_iterations}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


TUNED_HYPERPARAMS = Hyperparams()
BASE_HYPERPARAMS = Hyperparams(learning_rate=2e-5, epochs=5, head_max_iterations=100, solver="liblinear")


@dataclass(frozen=True)
class SearchSpace:
    learning_rate: tuple[float, float] = (1e-6, 1e-4)  # log-uniform
    epochs: tuple[int, int] = (1, 10)
    head_max_iterations: tuple[int, int] = (50, 300)
    solver: tuple[str, ...] = SOLVERS

    def sample(self, rng: np.random.Generator, template: Hyperparams = TUNED_HYPERPARAMS) -> Hyperparams:
        lo, hi = self.learning_rate
        return replace(
            template,
            learning_rate=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            epochs=int(rng.integers(self.epochs[0], self.epochs[1] + 1)),
            head_max_iterations=int(rng.integers(self.head_max_iterations[0], self.head_max_iterations[1] + 1)),
            solver=self.solver[int(rng.integers(len(self.solver)))],
        )

    def validate(self, hp: Hyperparams) -> None:
        problems = []
        if not self.learning_rate[0] <= hp.learning_rate <= self.learning_rate[1]:
            problems.append(f"learning_rate {hp.learning_rate} outside {self.learning_rate}")
        if not self.epochs[0] <= hp.epochs <= self.epochs[1]:
            problems.append(f"epochs {hp.epochs} outside {self.epochs}")
        if not self.head_max_iterations[0] <= hp.head_max_iterations <= self.head_max_iterations[1]:
            problems.append(f"head_max_iterations {hp.head_max_iterations} outside {self.head_max_iterations}")
        if hp.solver not in self.solver:
            problems.append(f"solver {hp.solver!r} not in {self.solver}")
        if problems:
            raise BoundsError("; ".join(problems))


@dataclass
class ClassifierArtifact:
    category: CategoryId
    variant: FormattingVariant
    backend: EmbeddingBackend
    head: HeadModel
    hyperparams: Hyperparams
    seed: int
    metadata: dict = field(default_factory=dict)

    def format(self, text: str, class_file: str | None = None) -> str:
        if self.variant is FormattingVariant.WITH_CLASSNAME and class_file is None:
            raise VariantMismatch(f"{self.category} classifier expects 'sentence | classname' input")
        return format_text(text, class_file, self.variant)

    def predict_proba_texts(self, inputs: Sequence[str]) -> np.ndarray:
        """Probabilities for already formatted model inputs."""
        if not inputs:
            return np.zeros(0)
        return predict_proba(self.head, encode(self.backend, inputs))

    def predict_samples(self, samples: Sequence[CommentSample], threshold: float = 0.5) -> np.ndarray:
        texts = [format_input(s, self.variant) for s in samples]
        if not texts:
            return np.zeros(0, dtype=int)
        return predict(self.head, encode(self.backend, texts), threshold)

    def save(self, directory: str | Path) -> Path:
        """Write manifest.json, head.txt and the backend state into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "head.txt").write_text(self.head.to_text(), encoding="utf-8")
        backend_meta = {"backend_id": self.backend.backend_id, **self.backend.save_state(directory)}
        manifest = {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "package_version": __version__,
            "category": self.category.key,
            "variant": self.variant.value,
            "backend": backend_meta,
            "head_file": "head.txt",
            "hyperparams": self.hyperparams.to_dict(),
            "seed": self.seed,
            "metadata": self.metadata,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "ClassifierArtifact":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ArtifactError(f"{directory} has no manifest.json") from None
        if manifest.get("format") != ARTIFACT_FORMAT:
            raise ArtifactError(f"{directory}: not a classifier artifact")
        if manifest.get("version") != ARTIFACT_VERSION:
            raise ArtifactError(f"{directory}: unsupported artifact version {manifest.get('version')}")
        meta = manifest["backend"]
        backend = backend_class(meta["backend_id"]).load_state(directory, meta)
        head = HeadModel.from_text((directory / manifest["head_file"]).read_text(encoding="utf-8"))
        return cls(
            category=CategoryId.parse(manifest["category"]),
            variant=FormattingVariant(manifest["variant"]),
            backend=backend,
            head=head,
            hyperparams=Hyperparams.from_dict(manifest["hyperparams"]),
            seed=int(manifest["seed"]),
            metadata=manifest.get("metadata", {}),
        )


@dataclass(frozen=True)
class TrialRecord:
    index: int
    hyperparams: Hyperparams
    objective: float
    wall_time: float


@dataclass(frozen=True)
class BenchmarkRow:
    backend_id: str
    accuracy: float
    f1: float
    wall_time: float


def _labels(samples: Iterable[CommentSample]) -> list[int]:
    return [s.label for s in samples]


def train_category(
    dataset: CategoryDataset,
    backend: EmbeddingBackend,
    hp: Hyperparams = TUNED_HYPERPARAMS,
    variant: FormattingVariant | str = FormattingVariant.WITH_CLASSNAME,
    seed: int = 0,
    output_dir: str | Path | None = None,
) -> ClassifierArtifact:
    """Train one category: format, generate pairs, fine-tune a clone, fit the head.

    ``backend`` is never modified; a private copy is fine-tuned. When
    ``output_dir`` is given the artifact is also saved there.
    """
    variant = FormattingVariant(variant)
    labels = _labels(dataset.train)
    if len(set(labels)) < 2:
        raise SingleClassInput(f"{dataset.category}: train partition needs both positive and negative samples")
    started = time.perf_counter()
    texts = [format_input(s, variant) for s in dataset.train]
    pairs = generate_pairs(list(zip(texts, labels)), PairGenConfig(hp.pair_iterations, seed))
    model = backend.clone()
    log = fine_tune(model, pairs, FineTuneConfig(hp.learning_rate, hp.epochs, hp.batch_size, seed))
    head = train_head(
        encode(model, texts),
        labels,
        HeadConfig(max_iterations=hp.head_max_iterations, solver=hp.solver, tolerance=hp.head_tolerance),
    )
    elapsed = time.perf_counter() - started
    if not head.converged:
        logger.info("%s: head stopped at max_iterations=%d (grad norm %.3g)", dataset.category,
                    hp.head_max_iterations, head.grad_norm)  # fmt: skip
    artifact = ClassifierArtifact(
        category=dataset.category,
        variant=variant,
        backend=model,
        head=head,
        hyperparams=hp,
        seed=seed,
        metadata={
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "train_seconds": round(elapsed, 3),
            "n_train": len(labels),
            "pair_count": len(pairs),
            "pair_loss_initial": log.initial_loss,
            "pair_loss_per_epoch": log.epoch_losses,
            "head_converged": head.converged,
            "head_iterations": head.iterations,
        },
    )
    if output_dir is not None:
        artifact.save(output_dir)
    return artifact


def evaluate_artifact(artifact: ClassifierArtifact, dataset: CategoryDataset) -> tuple[CategoryMetrics, ConfusionCounts]:
    """Score ``artifact`` on the test partition of ``dataset``."""
    if artifact.category != dataset.category:
        raise CategoryMismatch(f"artifact is for {artifact.category}, dataset is {dataset.category}")
    if not dataset.test:
        raise InsufficientSamples(f"{dataset.category}: empty test partition")
    counts = confusion(artifact.predict_samples(dataset.test).tolist(), _labels(dataset.test))
    return category_metrics(counts), counts


def train_all(
    datasets: Sequence[CategoryDataset],
    backend: EmbeddingBackend,
    hp: Hyperparams = TUNED_HYPERPARAMS,
    variant: FormattingVariant | str = FormattingVariant.WITH_CLASSNAME,
    seed: int = 0,
    output_root: str | Path | None = None,
    max_workers: int = 1,
) -> dict[CategoryId, ClassifierArtifact]:
    """Train every category independently, ``max_workers`` at a time."""

    def one(ds: CategoryDataset) -> ClassifierArtifact:
        out = None if output_root is None else Path(output_root) / artifact_dirname(ds.category)
        return train_category(ds, backend, hp, variant, seed, out)

    if max_workers <= 1:
        results = [one(ds) for ds in datasets]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, datasets))
    return {a.category: a for a in results}


def artifact_dirname(category: CategoryId) -> str:
    return f"{category.language.lower()}-{category.name.lower()}"


def _stratified_draw(
    samples: Sequence[CommentSample], per_class: dict[int, int], rng: np.random.Generator
) -> tuple[list[CommentSample], list[CommentSample]]:
    """Draw ``per_class[label]`` samples per label; returns (drawn, rest) in input order."""
    picked: set[int] = set()
    for label, n in per_class.items():
        idx = [i for i, s in enumerate(samples) if s.label == label]
        if n > len(idx):
            raise InsufficientSamples(f"need {n} samples with label {label}, only {len(idx)} available")
        picked.update(int(i) for i in rng.choice(idx, size=n, replace=False))
    drawn = [s for i, s in enumerate(samples) if i in picked]
    rest = [s for i, s in enumerate(samples) if i not in picked]
    return drawn, rest


def few_shot_subsample(dataset: CategoryDataset, n_per_class: int, seed: int = 0) -> CategoryDataset:
    """Keep ``n_per_class`` positives and negatives of the train partition; test is untouched."""
    drawn, _ = _stratified_draw(dataset.train, {1: n_per_class, 0: n_per_class}, np.random.default_rng(seed))
    return CategoryDataset(dataset.category, drawn, dataset.test)


def few_shot_benchmark(
    backends: Sequence[EmbeddingBackend],
    dataset: CategoryDataset,
    n_per_class: int = 32,
    epochs: int = 5,
    seed: int = 0,
    variant: FormattingVariant | str = FormattingVariant.WITH_CLASSNAME,
    hp: Hyperparams = BASE_HYPERPARAMS,
) -> list[BenchmarkRow]:
    """Compare base encoders on a balanced few-shot sample of one category.

    Every backend is trained on the same ``n_per_class`` positives and
    negatives for ``epochs`` epochs and scored on the full test partition.
    Wall time covers training and testing.
    """
    small = few_shot_subsample(dataset, n_per_class, seed)
    hp = replace(hp, epochs=epochs)
    rows = []
    for backend in backends:
        started = time.perf_counter()
        artifact = train_category(small, backend, hp, variant, seed)
        metrics, _ = evaluate_artifact(artifact, small)
        rows.append(BenchmarkRow(backend.backend_id, metrics.accuracy, metrics.f1, time.perf_counter() - started))
        logger.info("%s: accuracy %.3f F1 %.3f", backend.backend_id, metrics.accuracy, metrics.f1)
    return rows


def tuning_split(dataset: CategoryDataset, fraction: float = 0.2, seed: int = 0) -> CategoryDataset:
    """Stratified hold-out of ``fraction`` of the train partition, returned as the test side."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    per_class = {}
    for label in (1, 0):
        n = sum(1 for s in dataset.train if s.label == label)
        if n < 2:
            raise InsufficientSamples(f"{dataset.category}: need >= 2 train samples of label {label} to hold out")
        per_class[label] = min(n - 1, max(1, round(fraction * n)))
    held, kept = _stratified_draw(dataset.train, per_class, np.random.default_rng(seed))
    return CategoryDataset(dataset.category, kept, held)


def tune_hyperparams(
    dataset: CategoryDataset,
    backend: EmbeddingBackend,
    space: SearchSpace = SearchSpace(),
    trials: int = 20,
    seed: int = 0,
    variant: FormattingVariant | str = FormattingVariant.WITH_CLASSNAME,
    eval_on_test: bool = False,
    holdout_fraction: float = 0.2,
    enqueued: Sequence[Hyperparams] = (),
    template: Hyperparams = TUNED_HYPERPARAMS,
) -> tuple[Hyperparams, list[TrialRecord]]:
    """Seeded random search maximizing F1.

    By default the objective is F1 on a stratified hold-out of the train
    partition. ``eval_on_test`` trains on the full train partition and
    scores on the test partition instead, as the published search did.
    ``enqueued`` trials run first and count toward ``trials``. Ties go to
    the earliest trial.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    for hp in enqueued:
        space.validate(hp)
    split = dataset if eval_on_test else tuning_split(dataset, holdout_fraction, seed)
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []
    for index in range(trials):
        hp = enqueued[index] if index < len(enqueued) else space.sample(rng, template)
        space.validate(hp)
        started = time.perf_counter()
        artifact = train_category(split, backend, hp, variant, seed)
        metrics, _ = evaluate_artifact(artifact, split)
        history.append(TrialRecord(index, hp, metrics.f1, time.perf_counter() - started))
        logger.info("trial %d: F1 %.4f %s", index, metrics.f1, hp)
    best = max(history, key=lambda r: (r.objective, -r.index))
    return best.hyperparams, history
