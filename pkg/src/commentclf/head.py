"""L2-regularized binary logistic regression on frozen embeddings.

The objective is the mean binary cross-entropy plus
``l2_strength / 2 * ||w||**2`` (intercept unregularized). It is strictly
convex, so every solver converges to the same parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .errors import DimensionMismatch, NonFiniteObjective, SingleClassLabels

SOLVERS = ("newton-cg", "lbfgs", "liblinear")
_SOLVER_ALIASES = {"liblin": "liblinear", "liblinear-equivalent": "liblinear", "newton_cg": "newton-cg"}


def canonical_solver(name: str) -> str:
    solver = _SOLVER_ALIASES.get(name.strip().lower(), name.strip().lower())
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {name!r}; expected one of {SOLVERS}")
    return solver


@dataclass(frozen=True)
class HeadConfig:
    """Head training settings.

    ``l2_strength=None`` means ``1 / n_samples``, the mean-loss form of
    inverse regularization ``C = 1``.
    """

    max_iterations: int = 100
    solver: str = "lbfgs"
    l2_strength: float | None = None
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "solver", canonical_solver(self.solver))
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.l2_strength is not None and not self.l2_strength > 0:
            raise ValueError(f"l2_strength must be > 0, got {self.l2_strength}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass(frozen=True, eq=False)
class HeadModel:
    weights: np.ndarray
    bias: float
    l2_strength: float
    config: HeadConfig = field(default_factory=HeadConfig)
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[0])

    def to_text(self) -> str:
        lines = [
            "# logistic head v1",
            f"dimension {self.dimension}",
            f"bias {self.bias!r}",
            f"l2_strength {self.l2_strength!r}",
            f"solver {self.config.solver}",
            f"max_iterations {self.config.max_iterations}",
            f"tolerance {self.config.tolerance!r}",
            f"configured_l2_strength {self.config.l2_strength!r}",
            f"converged {int(self.converged)}",
            f"iterations {self.iterations}",
            f"grad_norm {self.grad_norm!r}",
            "weights",
            " ".join(repr(float(w)) for w in self.weights),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HeadModel":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        at = lines.index("weights")
        kv = dict(ln.split(" ", 1) for ln in lines[:at])
        weights = np.array([float(x) for x in lines[at + 1].split()]) if at + 1 < len(lines) else np.zeros(0)
        if weights.shape[0] != int(kv["dimension"]):
            raise ValueError(f"head file declares dimension {kv['dimension']} but has {weights.shape[0]} weights")
        configured = kv.get("configured_l2_strength", "None")
        config = HeadConfig(
            max_iterations=int(kv["max_iterations"]),
            solver=kv["solver"],
            l2_strength=None if configured == "None" else float(configured),
            tolerance=float(kv["tolerance"]),
        )
        return cls(
            weights=weights,
            bias=float(kv["bias"]),
            l2_strength=float(kv["l2_strength"]),
            config=config,
            converged=bool(int(kv["converged"])),
            iterations=int(kv["iterations"]),
            grad_norm=float(kv["grad_norm"]),
        )


def objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Objective value and gradient; ``params`` is ``[w..., b]``."""
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = (expit(z) - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def _hessp(params: np.ndarray, vec: np.ndarray, X: np.ndarray, l2: float) -> np.ndarray:
    w, b = params[:-1], params[-1]
    p = expit(X @ w + b)
    d = p * (1 - p) / X.shape[0]
    xv = d * (X @ vec[:-1] + vec[-1])
    out = np.empty_like(vec)
    out[:-1] = X.T @ xv + l2 * vec[:-1]
    out[-1] = xv.sum()
    return out


def _conjugate_gradient(hessp, g: np.ndarray, rtol: float, maxiter: int) -> np.ndarray:
    """Approximately solve ``H d = -g``."""
    d = np.zeros_like(g)
    r = -g.copy()
    p = r.copy()
    rr = r @ r
    stop = (rtol * math.sqrt(rr)) ** 2
    for _ in range(maxiter):
        if rr <= stop:
            break
        hp = hessp(p)
        alpha = rr / (p @ hp)
        d += alpha * p
        r -= alpha * hp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return d


def _newton_cg(x0, X, y, l2, config) -> tuple[np.ndarray, int]:
    x = x0
    it = 0
    f, g = objective(x, X, y, l2)
    while it < config.max_iterations:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.tolerance:
            break
        step = _conjugate_gradient(
            lambda v: _hessp(x, v, X, l2), g, rtol=min(0.5, math.sqrt(gnorm)), maxiter=10 * x.size
        )
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            f_new, g_new = objective(x + t * step, X, y, l2)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        x = x + t * step
        f, g = f_new, g_new
        it += 1
    return x, it


def train_head(embeddings: Sequence | np.ndarray, labels: Sequence[int], config: HeadConfig | None = None) -> HeadModel:
    """Fit the logistic head.

    The returned model records whether the gradient norm reached
    ``config.tolerance`` (``converged``) or ``max_iterations`` ran out.

    Raises:
        SingleClassLabels: fewer than two samples or only one class.
        NonFiniteObjective: non-finite inputs or a diverging objective.
    """
    config = config or HeadConfig()
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"need one embedding row per label, got {X.shape} and {y.shape}")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise SingleClassLabels("head training needs at least one positive and one negative label")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(X)):
        raise NonFiniteObjective("embeddings contain non-finite values")

    l2 = config.l2_strength if config.l2_strength is not None else 1.0 / len(y)
    x0 = np.zeros(X.shape[1] + 1)

    if config.solver == "newton-cg":
        params, iterations = _newton_cg(x0, X, y, l2, config)
    elif config.solver == "lbfgs":
        res = optimize.minimize(
            objective,
            x0,
            args=(X, y, l2),
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": config.max_iterations,
                "gtol": config.tolerance / math.sqrt(x0.size),
                "ftol": 0.0,
                "maxcor": 20,
            },
        )
        params, iterations = res.x, int(res.nit)
    else:
        # trust-region Newton, the primal method of liblinear
        res = optimize.minimize(
            lambda p: objective(p, X, y, l2),
            x0,
            jac=True,
            hessp=lambda p, v: _hessp(p, v, X, l2),
            method="trust-ncg",
            options={"maxiter": config.max_iterations, "gtol": config.tolerance},
        )
        params, iterations = res.x, int(res.nit)

    value, grad = objective(params, X, y, l2)
    if not (math.isfinite(value) and np.all(np.isfinite(params))):
        raise NonFiniteObjective(f"{config.solver} produced a non-finite objective")
    gnorm = float(np.linalg.norm(grad))
    return HeadModel(
        weights=params[:-1].copy(),
        bias=float(params[-1]),
        l2_strength=l2,
        config=config,
        converged=gnorm <= config.tolerance,
        iterations=iterations,
        grad_norm=gnorm,
    )


def _check_dims(model: HeadModel, x: np.ndarray) -> None:
    if x.shape[-1] != model.dimension:
        raise DimensionMismatch(f"embedding has dimension {x.shape[-1]}, head expects {model.dimension}")


def predict_proba(model: HeadModel, embedding) -> float | np.ndarray:
    """``sigmoid(w . x + b)`` for one embedding, or a vector for a 2-D batch."""
    x = np.asarray(embedding, dtype=np.float64)
    _check_dims(model, x)
    p = expit(x @ model.weights + model.bias)
    return float(p) if x.ndim == 1 else p


def predict(model: HeadModel, embedding, threshold: float = 0.5) -> int | np.ndarray:
    """1 iff the probability is at least ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    p = predict_proba(model, embedding)
    if isinstance(p, float):
        return int(p >= threshold)
    return (p >= threshold).astype(int)
