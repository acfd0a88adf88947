import csv
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commentclf.errors import SingleClassInput
from commentclf.pairgen import PairGenConfig, SentencePair, dump_pairs, generate_pairs

FOUR = [("p1", 1), ("p2", 1), ("n1", 0), ("n2", 0)]


def test_four_samples_one_iteration():
    pairs = generate_pairs(FOUR, PairGenConfig(iterations=1, seed=0))
    assert len(pairs) == 8
    assert Counter(p.target for p in pairs) == {1.0: 4, 0.0: 4}


def test_zero_iterations_is_empty():
    assert generate_pairs(FOUR, PairGenConfig(iterations=0)) == []
    assert generate_pairs([("only", 1)], PairGenConfig(iterations=0)) == []


def test_single_positive_pairs_with_itself():
    pairs = generate_pairs([("p", 1), ("n", 0)], PairGenConfig(iterations=3, seed=1))
    assert len(pairs) == 12
    assert all(p.text_a == p.text_b for p in pairs if p.target == 1.0)
    assert all(p.text_a != p.text_b for p in pairs if p.target == 0.0)


@pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0]])
def test_single_class_rejected(labels):
    with pytest.raises(SingleClassInput):
        generate_pairs([(f"t{i}", y) for i, y in enumerate(labels)], PairGenConfig(iterations=1))


def test_partners_respect_labels_and_avoid_self():
    data = [(f"p{i}", 1) for i in range(5)] + [(f"n{i}", 0) for i in range(3)]
    label = dict(data)
    pairs = generate_pairs(data, PairGenConfig(iterations=10, seed=3))
    for k in range(0, len(pairs), 2):
        pos, neg = pairs[k], pairs[k + 1]
        assert pos.text_a == neg.text_a
        assert pos.target == 1.0 and label[pos.text_b] == label[pos.text_a] and pos.text_b != pos.text_a
        assert neg.target == 0.0 and label[neg.text_b] != label[neg.text_a]


def test_positive_partner_is_uniform():
    # anchor p0 has 4 same-label partners; each should get ~1/4 of 4000 draws
    data = [(f"p{i}", 1) for i in range(5)] + [("n", 0)]
    pairs = generate_pairs(data, PairGenConfig(iterations=4000, seed=11))
    hits = Counter(p.text_b for p in pairs if p.text_a == "p0" and p.target == 1.0)
    assert set(hits) == {"p1", "p2", "p3", "p4"}
    expected = 1000
    chi2 = sum((h - expected) ** 2 / expected for h in hits.values())
    assert chi2 < 16.27  # chi-square, 3 dof, p = 0.001


def test_different_seeds_differ():
    data = [(f"p{i}", 1) for i in range(4)] + [(f"n{i}", 0) for i in range(4)]
    outs = {tuple(generate_pairs(data, PairGenConfig(2, seed))) for seed in range(30)}
    assert len(outs) >= 29


def test_dump_pairs(tmp_path):
    pairs = [SentencePair("a, b", "c", 1.0), SentencePair("d", 'e "q"', 0.0)]
    with dump_pairs(pairs, tmp_path / "pairs.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["text_a", "text_b", "target"], ["a, b", "c", "1.0"], ["d", 'e "q"', "0.0"]]


@st.composite
def two_class_samples(draw):
    n_pos = draw(st.integers(1, 12))
    n_neg = draw(st.integers(1, 12))
    labels = [1] * n_pos + [0] * n_neg
    labels = draw(st.permutations(labels))
    return [(f"s{i}", y) for i, y in enumerate(labels)]


@given(two_class_samples(), st.integers(0, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_pair_count_law(samples, iterations, seed):
    pairs = generate_pairs(samples, PairGenConfig(iterations, seed))
    assert len(pairs) == 2 * iterations * len(samples)
    assert sum(p.target == 1.0 for p in pairs) * 2 == len(pairs)
    assert pairs == generate_pairs(samples, PairGenConfig(iterations, seed))
