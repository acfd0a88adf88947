import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commentclf.errors import DimensionMismatch, NonFiniteObjective, SingleClassLabels
from commentclf.head import SOLVERS, HeadConfig, HeadModel, objective, predict, predict_proba, train_head

TINY_X = np.array([[-2.0], [-1.0], [-0.5], [0.3], [1.0], [2.5]])
TINY_Y = np.array([0, 0, 1, 0, 1, 1])


def brute_objective(w: float, b: float, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    total = 0.0
    for xi, yi in zip(x, y):
        z = w * xi + b
        total += math.log1p(math.exp(-abs(z))) + max(z, 0.0) - yi * z
    return total / len(y) + 0.5 * l2 * w * w


def grid_oracle(x: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, float]:
    """Dense grid over [-10, 10]^2, then coordinate descent by golden-section search."""
    grid = np.linspace(-10, 10, 2001)
    W, B = np.meshgrid(grid, grid, indexing="ij")
    Z = W[..., None] * x[None, None, :] + B[..., None]
    vals = np.mean(np.logaddexp(0, Z) - y * Z, axis=-1) + 0.5 * l2 * W**2
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    w, b = float(grid[i]), float(grid[j])

    def golden(f, lo, hi):
        phi = (math.sqrt(5) - 1) / 2
        for _ in range(200):
            c, d = hi - phi * (hi - lo), lo + phi * (hi - lo)
            if f(c) < f(d):
                hi = d
            else:
                lo = c
        return (lo + hi) / 2

    for _ in range(300):
        w = golden(lambda t: brute_objective(t, b, x, y, l2), w - 1, w + 1)
        b = golden(lambda t: brute_objective(w, t, x, y, l2), b - 1, b + 1)
    return w, b


def separable_2d(n=100, margin=1.0, seed=0):
    rng = np.random.default_rng(seed)
    normal = np.array([0.6, 0.8])
    pts, labels = [], []
    while len(pts) < n:
        p = rng.uniform(-6, 6, size=2)
        s = p @ normal - 0.5
        if abs(s) >= margin:
            pts.append(p)
            labels.append(int(s > 0))
    return np.array(pts), np.array(labels)


def separable_by_sweep(X, y, steps=3600) -> bool:
    """Brute-force: some direction and threshold split the classes perfectly."""
    for k in range(steps):
        theta = math.pi * k / steps
        proj = X @ np.array([math.cos(theta), math.sin(theta)])
        pos, neg = proj[y == 1], proj[y == 0]
        if pos.min() > neg.max() or neg.min() > pos.max():
            return True
    return False


class TestTrainHead:
    @pytest.mark.parametrize("solver", SOLVERS)
    def test_tiny_instance_matches_grid_oracle(self, solver):
        w_star, b_star = grid_oracle(TINY_X[:, 0], TINY_Y, 1.0)
        model = train_head(TINY_X, TINY_Y, HeadConfig(max_iterations=300, solver=solver, l2_strength=1.0, tolerance=1e-8))
        assert model.converged
        assert math.hypot(model.weights[0] - w_star, model.bias - b_star) <= 1e-4

    @pytest.mark.parametrize("solver", SOLVERS)
    def test_separable_training_accuracy(self, solver):
        X, y = separable_2d()
        assert separable_by_sweep(X, y)
        model = train_head(X, y, HeadConfig(max_iterations=300, solver=solver))
        acc = np.mean(predict(model, X) == y)
        assert acc >= 0.99

    def test_identical_embeddings_give_half(self):
        X = np.tile([0.3, -1.2, 2.0], (10, 1))
        y = np.array([0, 1] * 5)
        model = train_head(X, y, HeadConfig(solver="lbfgs", tolerance=1e-10))
        assert np.abs(model.weights).max() < 1e-6
        assert np.allclose(predict_proba(model, X), 0.5, atol=1e-6)

    def test_iteration_cap_is_flagged(self):
        X, y = separable_2d(seed=3)
        model = train_head(X, y, HeadConfig(max_iterations=1, solver="newton-cg", tolerance=1e-12))
        assert not model.converged
        assert model.iterations == 1

    @pytest.mark.parametrize("labels", [[1, 1, 1], [0]])
    def test_single_class(self, labels):
        with pytest.raises(SingleClassLabels):
            train_head(np.ones((len(labels), 2)), labels)

    def test_non_finite_inputs(self):
        with pytest.raises(NonFiniteObjective):
            train_head(np.array([[np.nan], [1.0]]), [0, 1])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            train_head(np.ones((3, 2)), [0, 1])

    def test_default_regularization_is_unit_c(self):
        model = train_head(TINY_X, TINY_Y)
        assert model.l2_strength == pytest.approx(1 / 6)


class TestObjective:
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((15, 4))
        y = rng.integers(0, 2, 15).astype(float)
        params = rng.standard_normal(5)
        _, grad = objective(params, X, y, 0.3)
        h = 1e-6
        fd = np.array([
            (objective(params + h * e, X, y, 0.3)[0] - objective(params - h * e, X, y, 0.3)[0]) / (2 * h)
            for e in np.eye(5)
        ])  # fmt: skip
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-5

    def test_matches_brute_objective(self):
        params = np.array([0.7, -0.2])
        val, _ = objective(params, TINY_X, TINY_Y.astype(float), 1.0)
        assert val == pytest.approx(brute_objective(0.7, -0.2, TINY_X[:, 0], TINY_Y, 1.0), abs=1e-12)


class TestSolverEquivalence:
    @pytest.mark.parametrize("seed", range(5))
    def test_solvers_agree(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((60, 5))
        y = (X @ rng.standard_normal(5) + 0.5 * rng.standard_normal(60) > 0).astype(int)
        tol = 1e-8
        fits = [train_head(X, y, HeadConfig(300, s, l2_strength=0.5, tolerance=tol)) for s in SOLVERS]
        params = [np.append(m.weights, m.bias) for m in fits]
        assert all(m.converged for m in fits)
        for p in params[1:]:
            assert np.linalg.norm(p - params[0]) <= 10 * tol

    def test_duplicated_points_same_optimum(self):
        X, y = separable_2d(n=30, seed=5)
        cfg = HeadConfig(300, "newton-cg", l2_strength=0.2, tolerance=1e-10)
        once = train_head(X, y, cfg)
        twice = train_head(np.vstack([X, X]), np.concatenate([y, y]), cfg)
        assert np.allclose(once.weights, twice.weights, atol=1e-8)
        assert once.bias == pytest.approx(twice.bias, abs=1e-8)


class TestPredict:
    def model(self, w, b):
        return HeadModel(np.asarray(w, dtype=float), float(b), 1.0)

    def test_zero_model_is_half(self):
        assert predict_proba(self.model([0.0, 0.0], 0.0), [3.0, -1.0]) == 0.5

    def test_hand_computed(self):
        p = predict_proba(self.model([1.0, -1.0], 0.0), [2.0, 1.0])
        assert p == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
        assert p == pytest.approx(0.7311, abs=1e-4)

    def test_threshold_boundary_is_positive(self):
        assert predict(self.model([0.0], 0.0), [1.0]) == 1

    def test_below_threshold(self):
        b = math.log(0.49 / 0.51)
        m = self.model([0.0], b)
        assert predict_proba(m, [1.0]) == pytest.approx(0.49)
        assert predict(m, [1.0]) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            predict_proba(self.model([1.0, 2.0], 0.0), [1.0])

    @pytest.mark.parametrize("t", [0.0, 1.0, 1.5])
    def test_threshold_range(self, t):
        with pytest.raises(ValueError):
            predict(self.model([1.0], 0.0), [1.0], threshold=t)

    @given(st.floats(-30, 30), st.floats(0, 30))
    def test_monotone_in_bias(self, b, step):
        m1, m2 = self.model([0.5], b), self.model([0.5], b + step)
        assert predict_proba(m2, [1.0]) >= predict_proba(m1, [1.0])

    def test_batch_prediction(self):
        m = self.model([1.0], 0.0)
        assert predict(m, np.array([[-1.0], [0.0], [2.0]])).tolist() == [0, 1, 1]


def test_text_round_trip_is_exact():
    X, y = separable_2d(n=40, seed=2)
    model = train_head(X, y, HeadConfig(241, "lbfgs"))
    again = HeadModel.from_text(model.to_text())
    assert np.array_equal(model.weights, again.weights)
    assert model.bias == again.bias
    assert again.config == model.config
    assert (again.converged, again.iterations, again.l2_strength) == (model.converged, model.iterations, model.l2_strength)
