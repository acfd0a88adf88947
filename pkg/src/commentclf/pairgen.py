"""Contrastive sentence-pair generation for embedding fine-tuning."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SingleClassInput


@dataclass(frozen=True)
class SentencePair:
    text_a: str
    text_b: str
    target: float  # 1.0 when the source labels agree, else 0.0


@dataclass(frozen=True)
class PairGenConfig:
    iterations: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")


def generate_pairs(samples: Sequence[tuple[str, int]], config: PairGenConfig) -> list[SentencePair]:
    """Build ``2 * iterations * len(samples)`` labelled pairs.

    In every iteration each sample is paired once with a same-label partner
    (target 1.0) and once with a different-label partner (target 0.0), both
    drawn uniformly with replacement. A sample is its own positive partner
    only when no other sample shares its label.
    """
    if config.iterations == 0 or not samples:
        return []
    texts = [t for t, _ in samples]
    labels = np.array([int(y) for _, y in samples])
    by_label = {y: np.flatnonzero(labels == y) for y in (0, 1)}
    if len(by_label[0]) == 0 or len(by_label[1]) == 0:
        raise SingleClassInput("pair generation needs at least one positive and one negative sample")

    rng = np.random.default_rng(config.seed)
    pairs: list[SentencePair] = []
    for _ in range(config.iterations):
        for i, y in enumerate(labels):
            same = by_label[y]
            if len(same) == 1:
                j = i
            else:
                # uniform over the same-label pool with i removed
                k = int(rng.integers(len(same) - 1))
                if k >= int(np.searchsorted(same, i)):
                    k += 1
                j = int(same[k])
            other = by_label[1 - y]
            m = int(other[rng.integers(len(other))])
            pairs.append(SentencePair(texts[i], texts[j], 1.0))
            pairs.append(SentencePair(texts[i], texts[m], 0.0))
    return pairs


def dump_pairs(pairs: Sequence[SentencePair], path: str | Path) -> Path:
    """Debug dump with columns text_a, text_b, target."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text_a", "text_b", "target"])
        for p in pairs:
            writer.writerow([p.text_a, p.text_b, p.target])
    return path
