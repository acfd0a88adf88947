"""Small generated datasets for desk-scale runs and tests."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .corpus import DEFAULT_COLUMNS, CategoryDataset, CategoryId, CommentSample, reference_counts

_OWNER_NAMES = ["J. Doe", "A. Smith", "K. Tanaka", "M. Rossi", "L. Chen", "R. Patel", "S. Novak", "E. Garcia"]
_OWNER_TEMPLATES = [
    "@author {name}",
    "Written by {name} @author",
    "@author {name} (maintainer)",
    "Original code: @author {name}",
]
_OTHER_VERBS = ["returns", "computes", "stores", "parses", "validates", "caches", "reads", "writes"]
_OTHER_OBJECTS = ["the checksum", "a buffer", "the index", "this value", "the header", "an offset", "the queue"]
_OTHER_TAILS = ["for the caller", "in place", "if present", "lazily", "once per call", "before flushing"]
_CLASSES = ["Checksum.java", "Buffer.java", "Index.java", "Parser.java", "Queue.java"]


def ownership_fixture(
    n_train: tuple[int, int] = (40, 40),
    n_test: tuple[int, int] = (10, 10),
    seed: int = 0,
    category: CategoryId | None = None,
) -> CategoryDataset:
    """A separable category: every positive sentence carries ``@author``, no negative does.

    ``n_train`` and ``n_test`` are (positives, negatives). Positive and
    negative sentences share no tokens.
    """
    category = category or CategoryId("Java", "Ownership")
    rng = np.random.default_rng(seed)

    def sentence(label: int) -> str:
        if label:
            tpl = _OWNER_TEMPLATES[rng.integers(len(_OWNER_TEMPLATES))]
            return tpl.format(name=_OWNER_NAMES[rng.integers(len(_OWNER_NAMES))])
        return " ".join([
            _OTHER_VERBS[rng.integers(len(_OTHER_VERBS))].capitalize(),
            _OTHER_OBJECTS[rng.integers(len(_OTHER_OBJECTS))],
            _OTHER_TAILS[rng.integers(len(_OTHER_TAILS))],
        ])  # fmt: skip

    samples: dict[str, list[CommentSample]] = {"train": [], "test": []}
    next_id = 0
    for part, (pos, neg) in (("train", n_train), ("test", n_test)):
        labels = [1] * pos + [0] * neg
        rng.shuffle(labels)
        for y in labels:
            samples[part].append(
                CommentSample(next_id, sentence(y), _CLASSES[rng.integers(len(_CLASSES))], part, category, int(y))
            )
            next_id += 1
    return CategoryDataset(category, samples["train"], samples["test"])


def write_reference_shaped_corpus(root: str | Path, seed: int = 0) -> list[Path]:
    """Write one CSV per language whose per-category counts equal the reference table.

    Sentences are placeholders; only the row structure is meaningful. Useful
    for exercising ingestion without the released data.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    by_lang: dict[str, list[tuple[str, object]]] = {}
    for key, counts in reference_counts().items():
        lang, _, name = key.partition("/")
        by_lang.setdefault(lang, []).append((name, counts))
    paths = []
    header = [DEFAULT_COLUMNS[f] for f in ("id", "class_file", "text", "partition", "label", "category")]
    for lang, cats in by_lang.items():
        path = root / lang.lower() / "input" / f"{lang.lower()}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        sid = 0
        for name, c in cats:
            for part, label, n in (("0", 1, c.train_pos), ("0", 0, c.train_neg), ("1", 1, c.test_pos), ("1", 0, c.test_neg)):
                for _ in range(n):
                    rows.append([sid, f"Class{sid % 97}.{lang.lower()[:2]}", f"sentence {sid} about {name}, quoted", part, label, name])
                    sid += 1
        rng.shuffle(rows)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        paths.append(path)
    return paths
