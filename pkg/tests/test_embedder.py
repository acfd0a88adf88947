import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commentclf.embedder import (
    FineTuneConfig,
    ToyHashEncoder,
    cosine_loss_and_grad,
    encode,
    fine_tune,
    make_backend,
    registered_backends,
    toy_encoder,
)
from commentclf.errors import BackendUnavailable, NonFiniteLoss
from commentclf.pairgen import PairGenConfig, SentencePair, generate_pairs

EXAMPLE_PAIRS = generate_pairs(
    [("author tag", 1), ("written by me", 1), ("returns value", 0), ("computes sum", 0)], PairGenConfig(1, 0)
)


def hashed_counts(text: str, dimension: int) -> np.ndarray:
    """Feature oracle written from the encoder's documented definition."""
    v = np.zeros(dimension)
    for tok in text.lower().split():
        v[zlib.crc32(tok.encode()) % dimension] += 1
    return v


def slow_loss(matrix: np.ndarray, pairs, dimension: int) -> float:
    total = 0.0
    for p in pairs:
        u = matrix @ hashed_counts(p.text_a, dimension)
        v = matrix @ hashed_counts(p.text_b, dimension)
        nu, nv = math.sqrt(float(u @ u)), math.sqrt(float(v @ v))
        cos = float(u @ v) / (nu * nv) if nu > 0 and nv > 0 else 0.0
        total += (p.target - cos) ** 2
    return total / len(pairs)


class TestEncode:
    def test_same_text_same_vector(self):
        out = encode(toy_encoder(16, 0), ["a", "a"])
        assert np.array_equal(out[0], out[1])

    def test_shape(self):
        assert encode(toy_encoder(16, 3), ["x"]).shape == (1, 16)

    def test_distinct_token_sets_not_parallel(self):
        enc = toy_encoder(16, 0)
        a, b = encode(enc, ["author tag", "returns value"])
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        fa, fb = hashed_counts("author tag", 16), hashed_counts("returns value", 16)
        ua, ub = enc.matrix @ fa, enc.matrix @ fb
        assert cos == pytest.approx(ua @ ub / (np.linalg.norm(ua) * np.linalg.norm(ub)), abs=1e-12)
        assert cos < 1

    def test_empty_string_is_zero(self):
        assert np.array_equal(encode(toy_encoder(8, 5), [""]), np.zeros((1, 8)))

    def test_same_dimension_and_seed_identical(self):
        texts = ["@author J. Doe", "Returns the checksum | Checksum.java"]
        assert np.array_equal(encode(toy_encoder(32, 9), texts), encode(toy_encoder(32, 9), texts))
        assert not np.array_equal(encode(toy_encoder(32, 9), texts), encode(toy_encoder(32, 10), texts))

    def test_features_match_oracle(self):
        enc = toy_encoder(24, 0)
        text = "The The quick @author | A.java"
        assert np.array_equal(enc.features([text])[0], hashed_counts(text, 24))

    def test_dimension_must_be_at_least_two(self):
        with pytest.raises(ValueError):
            ToyHashEncoder(1)


class TestGradient:
    @staticmethod
    def fd_grad(matrix, a, b, t, h=1e-6):
        g = np.zeros_like(matrix)
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                mp, mm = matrix.copy(), matrix.copy()
                mp[i, j] += h
                mm[i, j] -= h
                g[i, j] = (cosine_loss_and_grad(mp, a, b, t)[0] - cosine_loss_and_grad(mm, a, b, t)[0]) / (2 * h)
        return g

    @pytest.mark.parametrize("seed", range(20))
    def test_single_pair_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        d = 6
        matrix = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        a = rng.integers(0, 3, size=(1, d)).astype(float)
        b = rng.integers(0, 3, size=(1, d)).astype(float)
        a[0, 0] += 1
        b[0, 1] += 1
        t = np.array([float(rng.integers(2))])
        _, analytic = cosine_loss_and_grad(matrix, a, b, t)
        numeric = self.fd_grad(matrix, a, b, t)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-4

    def test_loss_matches_slow_oracle(self):
        enc = toy_encoder(16, 2)
        assert enc.pair_loss(EXAMPLE_PAIRS) == pytest.approx(slow_loss(enc.matrix, EXAMPLE_PAIRS, 16), abs=1e-12)

    def test_zero_embedding_contributes_no_gradient(self):
        matrix = np.eye(4)
        a = np.zeros((1, 4))
        b = np.ones((1, 4))
        loss, grad = cosine_loss_and_grad(matrix, a, b, np.array([1.0]))
        assert loss == 1.0
        assert not grad.any()


class TestFineTune:
    def test_self_pairs_have_zero_loss(self):
        pairs = [SentencePair(t, t, 1.0) for t in ["author tag", "returns value", "x y z"]]
        log = fine_tune(toy_encoder(16, 0), pairs, FineTuneConfig(1e-2, 3))
        assert log.epoch_losses[0] < 1e-20

    def test_loss_decreases(self):
        log = fine_tune(toy_encoder(16, 0), EXAMPLE_PAIRS, FineTuneConfig(learning_rate=1e-2, epochs=20, seed=0))
        assert len(log) == 20
        assert log.final_loss < log.initial_loss

    def test_published_learning_rate_accepted(self):
        cfg = FineTuneConfig(learning_rate=1.71e-05, epochs=6)
        assert len(fine_tune(toy_encoder(16, 0), EXAMPLE_PAIRS, cfg)) == 6

    def test_logged_loss_recomputes_from_snapshots(self):
        enc = toy_encoder(16, 4)
        snapshots = []
        log = fine_tune(enc, EXAMPLE_PAIRS, FineTuneConfig(5e-2, 5, 3, 1), lambda e, b: snapshots.append(b.matrix.copy()))
        assert len(snapshots) == 5
        for logged, m in zip(log.epoch_losses, snapshots):
            assert abs(logged - slow_loss(m, EXAMPLE_PAIRS, 16)) < 1e-9

    def test_divergence_raises(self):
        with pytest.raises(NonFiniteLoss, match="diverged"):
            fine_tune(toy_encoder(16, 0), EXAMPLE_PAIRS, FineTuneConfig(1e308, 2))

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            fine_tune(toy_encoder(16, 0), [], FineTuneConfig())

    def test_shuffle_is_seeded(self):
        def run(seed):
            enc = toy_encoder(16, 0)
            fine_tune(enc, EXAMPLE_PAIRS, FineTuneConfig(1e-1, 2, 2, seed))
            return enc.matrix

        assert np.array_equal(run(1), run(1))
        assert not np.array_equal(run(1), run(2))

    @given(st.integers(0, 1000), st.integers(1, 4), st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_zero_learning_rate_is_noop(self, seed, epochs, batch):
        enc = toy_encoder(16, seed)
        texts = ["author tag", "returns value", "@author J. Doe | A.java"]
        before = encode(enc, texts)
        fine_tune(enc, EXAMPLE_PAIRS, FineTuneConfig(0.0, epochs, batch, seed))
        assert np.array_equal(before, encode(enc, texts))

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ValueError):
            FineTuneConfig(learning_rate=-1e-3)


class TestStateAndRegistry:
    def test_state_round_trip_is_exact(self, tmp_path):
        enc = toy_encoder(12, 7)
        fine_tune(enc, EXAMPLE_PAIRS, FineTuneConfig(1e-1, 2))
        meta = enc.save_state(tmp_path)
        again = ToyHashEncoder.load_state(tmp_path, meta)
        assert np.array_equal(enc.matrix, again.matrix)
        assert (tmp_path / "backend_state.txt").read_text().startswith("# toy-hash-encoder state v1")

    def test_clone_is_independent(self):
        enc = toy_encoder(12, 7)
        copy = enc.clone()
        fine_tune(copy, EXAMPLE_PAIRS, FineTuneConfig(1e-1, 2))
        assert not np.array_equal(enc.matrix, copy.matrix)
        assert np.array_equal(enc.matrix, toy_encoder(12, 7).matrix)

    def test_pretrained_ids_registered(self):
        ids = registered_backends()
        for name in ["paraphrase-MiniLM-L3-v2", "all-MiniLM-L6-v2", "all-mpnet-base-v2",
                     "st-codesearch-distilroberta-base", "toy-hash-encoder"]:  # fmt: skip
            assert name in ids

    def test_make_toy(self):
        enc = make_backend("toy-hash-encoder", dimension=10, seed=1)
        assert enc.dimension == 10

    def test_unknown_backend(self):
        with pytest.raises(BackendUnavailable):
            make_backend("no-such-model")

    def test_pretrained_unavailable_offline(self, monkeypatch, tmp_path):
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("HF_HOME", str(tmp_path))
        monkeypatch.setenv("SENTENCE_TRANSFORMERS_HOME", str(tmp_path))
        pytest.importorskip("sentence_transformers")
        with pytest.raises(BackendUnavailable):
            make_backend("all-mpnet-base-v2")
