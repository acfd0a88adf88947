"""Loading, validation and input formatting for the per-category comment CSVs.

Each category of the competition dataset is an independent binary problem.
A CSV row carries a sentence id, the sentence, the class (or file) it was
extracted from, the partition, the category and the instance type
(1 = the sentence belongs to the category).
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import BadLabel, BadRow, EmptyFile, MissingColumn, UnknownCategory

logger = logging.getLogger(__name__)

LANGUAGES = ("Java", "Python", "Pharo")

# Canonical header names, keyed by the field they populate.
DEFAULT_COLUMNS = {
    "id": "comment_sentence_id",
    "text": "comment_sentence",
    "class_file": "class",
    "partition": "partition",
    "category": "category",
    "label": "instance_type",
}

# Long-form names used by the released dataset, and the abbreviations used in
# result tables, mapped onto the short names of the count table.
_NAME_ALIASES = {
    "collab": "Collaborators",
    "classreferences": "Classref",
    "keyimplementationpoints": "Keyimpl",
    "keymessages": "Keymsg",
    "responsibilities": "Resp",
    "developmentnotes": "Devnotes",
    "depreciation": "Deprecation",
}

_PARTITIONS = {"train": "train", "test": "test", "0": "train", "1": "test"}


class FormattingVariant(str, enum.Enum):
    WITH_CLASSNAME = "with_classname"
    SENTENCE_ONLY = "sentence_only"


@dataclass(frozen=True, order=True)
class CategoryId:
    """A (language, category name) pair such as ``Java/Ownership``.

    Construction canonicalizes the language spelling. The name is kept as
    given unless it is a known alias of one of the 19 reference categories;
    whether the pair is one of those is reported by :attr:`is_reference`.
    """

    language: str
    name: str

    def __post_init__(self) -> None:
        lang = _canonical_language(self.language)
        if lang is None:
            raise UnknownCategory(f"unknown language {self.language!r}; expected one of {LANGUAGES}")
        object.__setattr__(self, "language", lang)
        object.__setattr__(self, "name", _canonical_name(lang, self.name.strip()))

    @classmethod
    def parse(cls, key: str) -> "CategoryId":
        """Parse ``"Language/Name"``."""
        lang, sep, name = key.partition("/")
        if not sep or not name:
            raise UnknownCategory(f"category key must look like 'Java/Ownership', got {key!r}")
        return cls(lang, name)

    @classmethod
    def reference(cls, language: str, name: str) -> "CategoryId":
        """Like the constructor, but rejects pairs outside the reference table."""
        cat = cls(language, name)
        if not cat.is_reference:
            raise UnknownCategory(f"{cat} is not one of the 19 reference categories")
        return cat

    @property
    def key(self) -> str:
        return f"{self.language}/{self.name}"

    @property
    def is_reference(self) -> bool:
        return self.key in reference_counts()

    def __str__(self) -> str:
        return self.key


def _canonical_language(language: str) -> str | None:
    for lang in LANGUAGES:
        if lang.lower() == language.strip().lower():
            return lang
    return None


def _canonical_name(language: str, name: str) -> str:
    folded = name.lower()
    folded = _NAME_ALIASES.get(folded, folded).lower()
    for key in reference_counts():
        lang, _, ref = key.partition("/")
        if lang == language and ref.lower() == folded:
            return ref
    return name


@dataclass(frozen=True)
class CommentSample:
    id: int
    text: str
    class_file: str
    partition: str
    category: CategoryId
    label: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise BadRow(f"sample {self.id}: empty sentence text")
        if self.label not in (0, 1):
            raise BadLabel(f"sample {self.id}: label must be 0 or 1, got {self.label!r}")
        if self.partition not in ("train", "test"):
            raise BadRow(f"sample {self.id}: partition must be train/test, got {self.partition!r}")


@dataclass(frozen=True)
class Counts:
    train_pos: int
    train_neg: int
    test_pos: int
    test_neg: int

    @property
    def total(self) -> int:
        return self.train_pos + self.train_neg + self.test_pos + self.test_neg

    def as_dict(self) -> dict[str, int]:
        return {
            "train_pos": self.train_pos,
            "train_neg": self.train_neg,
            "test_pos": self.test_pos,
            "test_neg": self.test_neg,
        }

    @classmethod
    def of(cls, train: Iterable[CommentSample], test: Iterable[CommentSample]) -> "Counts":
        tr = Counter(s.label for s in train)
        te = Counter(s.label for s in test)
        return cls(tr[1], tr[0], te[1], te[0])


@dataclass(frozen=True)
class CategoryDataset:
    category: CategoryId
    train: tuple[CommentSample, ...]
    test: tuple[CommentSample, ...]
    counts: Counts = field(init=False)
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        for s in self.train + self.test:
            if s.category != self.category:
                raise BadRow(f"sample {s.id} belongs to {s.category}, not {self.category}")
        object.__setattr__(self, "counts", Counts.of(self.train, self.test))

    def __len__(self) -> int:
        return len(self.train) + len(self.test)


@dataclass(frozen=True)
class Discrepancy:
    category: str
    kind: str  # "count_mismatch" | "unknown_category" | "missing_category"
    field: str | None = None
    expected: int | None = None
    got: int | None = None

    def __str__(self) -> str:
        if self.kind == "count_mismatch":
            return f"{self.category}: {self.field} expected {self.expected}, got {self.got}"
        if self.kind == "unknown_category":
            return f"{self.category}: not in the reference table"
        return f"{self.category}: no data loaded"


@cache
def reference_counts() -> dict[str, Counts]:
    """The embedded per-category count table, keyed ``"Language/Name"``."""
    raw = json.loads(resources.files("commentclf.data").joinpath("reference_counts.json").read_text("utf-8"))
    out = {}
    for key, row in raw["categories"].items():
        counts = Counts(row["train_pos"], row["train_neg"], row["test_pos"], row["test_neg"])
        assert counts.total == row["total"], key
        out[key] = counts
    return out


def reference_categories() -> list[CategoryId]:
    return [CategoryId.parse(k) for k in reference_counts()]


def _resolve_columns(header: list[str], columns: Mapping[str, str] | None) -> dict[str, int]:
    names = dict(DEFAULT_COLUMNS)
    if columns:
        unknown = set(columns) - set(names)
        if unknown:
            raise ValueError(f"unknown fields in column map: {sorted(unknown)}")
        names.update(columns)
    stripped = [h.strip() for h in header]
    missing = [col for col in names.values() if col not in stripped]
    if missing:
        raise MissingColumn(f"missing column(s) {missing}; header is {stripped}")
    return {fld: stripped.index(col) for fld, col in names.items()}


def _parse_label(raw: str, row_no: int) -> int:
    value = raw.strip()
    if value in ("0", "1"):
        return int(value)
    try:
        as_float = float(value)
    except ValueError:
        as_float = None
    if as_float in (0.0, 1.0):
        return int(as_float)
    raise BadLabel(f"row {row_no}: instance type must be 0 or 1, got {raw!r}")


def load_category(
    path: str | Path,
    category: CategoryId,
    columns: Mapping[str, str] | None = None,
) -> CategoryDataset:
    """Load the rows of ``category`` from a competition-format CSV.

    The file may hold a single category or every category of a language;
    rows whose category column names another category are skipped.

    Args:
        path: UTF-8 CSV with a header row.
        category: The category to load.
        columns: Optional map from field name (see ``DEFAULT_COLUMNS``) to
            the header string used in this file.

    Raises:
        MissingColumn: a required column is absent from the header.
        BadLabel: an instance type is not 0/1.
        BadRow: a partition outside {train, test} or a blank sentence.
        EmptyFile: no data rows for the category.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: file is empty")
        idx = _resolve_columns(header, columns)
        train: list[CommentSample] = []
        test: list[CommentSample] = []
        skipped = 0
        seen: Counter[int] = Counter()
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise BadRow(f"{path}:{row_no}: expected {len(header)} fields, got {len(row)}")
            row_cat = CategoryId(category.language, row[idx["category"]])
            if row_cat != category:
                skipped += 1
                continue
            part = _PARTITIONS.get(row[idx["partition"]].strip().lower())
            if part is None:
                raise BadRow(f"{path}:{row_no}: partition must be train/test, got {row[idx['partition']]!r}")
            try:
                sid = int(row[idx["id"]])
            except ValueError:
                raise BadRow(f"{path}:{row_no}: non-integer id {row[idx['id']]!r}") from None
            sample = CommentSample(
                id=sid,
                text=row[idx["text"]].rstrip("\r\n"),
                class_file=row[idx["class_file"]],
                partition=part,
                category=category,
                label=_parse_label(row[idx["label"]], row_no),
            )
            seen[sid] += 1
            (train if part == "train" else test).append(sample)
    if not train and not test:
        detail = f" ({skipped} rows of other categories)" if skipped else ""
        raise EmptyFile(f"{path}: no rows for {category}{detail}")
    warnings = tuple(f"duplicate id {sid} ({n} rows)" for sid, n in sorted(seen.items()) if n > 1)
    for w in warnings:
        logger.warning("%s: %s", path, w)
    return CategoryDataset(category, train, test, warnings=warnings)


def categories_in(path: str | Path, language: str, columns: Mapping[str, str] | None = None) -> list[CategoryId]:
    """Distinct categories named in a CSV's category column, in first-seen order."""
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        col = _resolve_columns(header, columns)["category"]
        found: dict[CategoryId, None] = {}
        for row in reader:
            if len(row) > col and row[col].strip():
                found.setdefault(CategoryId(language, row[col]), None)
    return list(found)


def discover(root: str | Path, columns: Mapping[str, str] | None = None) -> list[tuple[Path, CategoryId]]:
    """Find (csv file, category) pairs below ``root``.

    The language of a file is taken from the first path component (directory
    or file-name token) that names one of Java, Python or Pharo.
    """
    root = Path(root)
    found = []
    for path in sorted(root.rglob("*.csv")):
        rel = path.relative_to(root)
        tokens = [p for p in rel.parts[:-1]] + rel.stem.replace("-", "_").split("_")
        language = next((lang for t in tokens if (lang := _canonical_language(t))), None)
        if language is None:
            logger.info("skipping %s: no language in path", path)
            continue
        try:
            cats = categories_in(path, language, columns)
        except MissingColumn:
            logger.info("skipping %s: not a comment CSV", path)
            continue
        found.extend((path, c) for c in cats)
    return found


def write_category(dataset: CategoryDataset, path: str | Path) -> Path:
    """Write a dataset back out with the canonical header (train rows first)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([DEFAULT_COLUMNS[f] for f in ("id", "text", "class_file", "partition", "category", "label")])
        for s in dataset.train + dataset.test:
            writer.writerow([s.id, s.text, s.class_file, s.partition, s.category.name, s.label])
    return path


def format_input(sample: CommentSample, variant: FormattingVariant | str) -> str:
    """Model input for a sample: ``"text | class_file"`` or the bare text.

    Pipes already present in the text are not escaped, so the mapping is
    only injective over pipe-free sentences.
    """
    return format_text(sample.text, sample.class_file, variant)


def format_text(text: str, class_file: str | None, variant: FormattingVariant | str) -> str:
    variant = FormattingVariant(variant)
    if variant is FormattingVariant.SENTENCE_ONLY:
        return text
    if class_file is None:
        raise ValueError("with_classname formatting needs a class name")
    return f"{text} | {class_file}"


def validate_against_reference(
    datasets: Iterable[CategoryDataset],
    require_all: bool = False,
) -> list[Discrepancy]:
    """Compare loaded counts with the embedded reference table.

    Returns an empty list iff every dataset matches exactly. With
    ``require_all``, reference categories that were not loaded are reported
    as well.
    """
    table = reference_counts()
    out: list[Discrepancy] = []
    seen = set()
    for ds in datasets:
        key = ds.category.key
        seen.add(key)
        expected = table.get(key)
        if expected is None:
            out.append(Discrepancy(key, "unknown_category"))
            continue
        got = ds.counts.as_dict()
        for name, want in expected.as_dict().items():
            if got[name] != want:
                out.append(Discrepancy(key, "count_mismatch", name, want, got[name]))
    if require_all:
        out.extend(Discrepancy(key, "missing_category") for key in table if key not in seen)
    return out
