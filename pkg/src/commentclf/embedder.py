"""Fine-tunable sentence encoders.

Two backends implement the same contract:

* :class:`ToyHashEncoder` -- hashed token counts multiplied by a trainable
  square matrix. Small, deterministic and with exact gradients, so the
  whole pipeline can be exercised on a laptop.
* :class:`SentenceTransformerBackend` -- wraps a pretrained
  ``sentence-transformers`` model. Optional; needs the ``transformer`` extra
  and the model weights.

Fine-tuning minimizes the mean over pairs of ``(target - cos(a, b))**2``.
"""

from __future__ import annotations

import copy
import logging
import math
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BackendUnavailable, NonFiniteLoss
from .pairgen import SentencePair

logger = logging.getLogger(__name__)

TOY_BACKEND_ID = "toy-hash-encoder"

# Hub paths of the base models compared in the few-shot model-selection run.
PRETRAINED_MODELS = {
    "paraphrase-MiniLM-L3-v2": "sentence-transformers/paraphrase-MiniLM-L3-v2",
    "all-MiniLM-L6-v2": "sentence-transformers/all-MiniLM-L6-v2",
    "all-mpnet-base-v2": "sentence-transformers/all-mpnet-base-v2",
    "st-codesearch-distilroberta-base": "flax-sentence-embeddings/st-codesearch-distilroberta-base",
}


@dataclass(frozen=True)
class FineTuneConfig:
    learning_rate: float = 2e-5
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainingLog:
    """Pair loss before training and after each epoch (full pair set)."""

    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch_losses)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


class EmbeddingBackend:
    """Contract shared by all encoders.

    Subclasses set ``backend_id`` and ``dimension`` and implement
    :meth:`encode`, :meth:`fine_tune`, :meth:`save_state` and
    :meth:`load_state`.
    """

    backend_id: str
    dimension: int

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def fine_tune(
        self,
        pairs: Sequence[SentencePair],
        config: FineTuneConfig,
        on_epoch_end: Callable[[int, "EmbeddingBackend"], None] | None = None,
    ) -> TrainingLog:
        raise NotImplementedError

    def clone(self) -> "EmbeddingBackend":
        return copy.deepcopy(self)

    def save_state(self, directory: Path) -> dict:
        """Write trainable state under ``directory``; return manifest entries."""
        raise NotImplementedError

    @classmethod
    def load_state(cls, directory: Path, meta: dict) -> "EmbeddingBackend":
        raise NotImplementedError


def encode(backend: EmbeddingBackend, texts: Sequence[str]) -> np.ndarray:
    """Encode ``texts`` into a ``(len(texts), backend.dimension)`` array."""
    out = backend.encode(list(texts))
    if out.shape != (len(texts), backend.dimension):
        raise RuntimeError(f"{backend.backend_id} returned shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss(f"{backend.backend_id} produced non-finite embeddings")
    return out


def fine_tune(
    backend: EmbeddingBackend,
    pairs: Sequence[SentencePair],
    config: FineTuneConfig,
    on_epoch_end: Callable[[int, EmbeddingBackend], None] | None = None,
) -> TrainingLog:
    """Fine-tune ``backend`` in place on cosine-similarity regression.

    ``on_epoch_end(epoch, backend)`` is called after each epoch's loss is logged.
    """
    if not pairs:
        raise ValueError("fine_tune needs at least one pair")
    return backend.fine_tune(pairs, config, on_epoch_end)


# -- toy encoder ---------------------------------------------------------------

_TOKEN = re.compile(r"\S+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dimension: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % dimension


def cosine_loss_and_grad(
    matrix: np.ndarray,
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean ``(t - cos(M a, M b))**2`` over rows and its gradient w.r.t. ``M``.

    Pairs with a zero-norm embedding count as cosine 0 with no gradient.
    """
    # overflow surfaces as a non-finite loss, which callers check
    with np.errstate(over="ignore", invalid="ignore"):
        u = feats_a @ matrix.T
        v = feats_b @ matrix.T
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        ok = (nu > 0) & (nv > 0)
        safe_nu = np.where(ok, nu, 1.0)
        safe_nv = np.where(ok, nv, 1.0)
        cos = np.where(ok, np.einsum("ij,ij->i", u, v) / (safe_nu * safe_nv), 0.0)
        resid = targets - cos
        n = len(targets)
        loss = float(np.mean(resid**2))

        g = np.where(ok, -2.0 * resid / n, 0.0)[:, None]
        inv = 1.0 / (safe_nu * safe_nv)
        dcos_du = v * inv[:, None] - u * (cos / safe_nu**2)[:, None]
        dcos_dv = u * inv[:, None] - v * (cos / safe_nv**2)[:, None]
        grad = (g * dcos_du).T @ feats_a + (g * dcos_dv).T @ feats_b
    return loss, grad


class ToyHashEncoder(EmbeddingBackend):
    """Hashed bag-of-tokens features times a trainable ``dimension x dimension`` matrix.

    Tokens are lowercased whitespace-separated strings hashed with CRC32 into
    ``dimension`` buckets. The matrix starts at identity plus seeded Gaussian
    noise and is trained with plain mini-batch gradient descent.
    """

    backend_id = TOY_BACKEND_ID
    STATE_FILE = "backend_state.txt"

    def __init__(self, dimension: int = 64, seed: int = 0, noise: float = 0.01):
        if dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.noise = noise
        rng = np.random.default_rng(seed)
        self.matrix = np.eye(dimension) + noise * rng.standard_normal((dimension, dimension))

    def features(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                out[row, _bucket(tok, self.dimension)] += 1.0
        return out

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return self.features(texts) @ self.matrix.T

    def pair_loss(self, pairs: Sequence[SentencePair]) -> float:
        a, b, t = self._pair_arrays(pairs)
        return cosine_loss_and_grad(self.matrix, a, b, t)[0]

    def _pair_arrays(self, pairs: Sequence[SentencePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        uniq = {t: None for p in pairs for t in (p.text_a, p.text_b)}
        index = {t: k for k, t in enumerate(uniq)}
        feats = self.features(list(uniq))
        a = feats[[index[p.text_a] for p in pairs]]
        b = feats[[index[p.text_b] for p in pairs]]
        return a, b, np.array([p.target for p in pairs], dtype=float)

    def fine_tune(self, pairs, config, on_epoch_end=None) -> TrainingLog:
        a, b, t = self._pair_arrays(pairs)
        log = TrainingLog(cosine_loss_and_grad(self.matrix, a, b, t)[0])
        rng = np.random.default_rng(config.seed)
        for epoch in range(config.epochs):
            order = rng.permutation(len(t))
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                _, grad = cosine_loss_and_grad(self.matrix, a[batch], b[batch], t[batch])
                with np.errstate(over="ignore", invalid="ignore"):
                    self.matrix -= config.learning_rate * grad
            loss = cosine_loss_and_grad(self.matrix, a, b, t)[0]
            if not (math.isfinite(loss) and np.all(np.isfinite(self.matrix))):
                raise NonFiniteLoss(
                    f"loss diverged at epoch {epoch} (lr={config.learning_rate}); last finite loss "
                    f"{log.final_loss:.6g}"
                )
            log.epoch_losses.append(loss)
            logger.debug("epoch %d loss %.6f", epoch, loss)
            if on_epoch_end is not None:
                on_epoch_end(epoch, self)
        return log

    def save_state(self, directory: Path) -> dict:
        path = Path(directory) / self.STATE_FILE
        header = f"{TOY_BACKEND_ID} state v1\ndimension {self.dimension}\nseed {self.seed}\nnoise {self.noise!r}"
        np.savetxt(path, self.matrix, fmt="%.17g", header=header)
        return {"state_file": self.STATE_FILE, "dimension": self.dimension, "seed": self.seed, "noise": self.noise}

    @classmethod
    def load_state(cls, directory: Path, meta: dict) -> "ToyHashEncoder":
        enc = cls(int(meta["dimension"]), int(meta["seed"]), float(meta.get("noise", 0.01)))
        matrix = np.loadtxt(Path(directory) / meta.get("state_file", cls.STATE_FILE), ndmin=2)
        if matrix.shape != (enc.dimension, enc.dimension):
            raise ValueError(f"state matrix has shape {matrix.shape}, expected {(enc.dimension,) * 2}")
        enc.matrix = matrix
        return enc


def toy_encoder(dimension: int = 64, seed: int = 0) -> ToyHashEncoder:
    return ToyHashEncoder(dimension, seed)


# -- pretrained sentence-transformers backend -----------------------------------


class SentenceTransformerBackend(EmbeddingBackend):
    """A pretrained ``sentence-transformers`` model, fine-tuned with AdamW.

    The optimizer is the backend's own; only the loss is shared with the toy
    encoder.
    """

    STATE_DIR = "backend_model"

    def __init__(self, backend_id: str, model_path: str | None = None, device: str | None = None):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendUnavailable("install the 'transformer' extra to use pretrained encoders") from exc
        self.backend_id = backend_id
        source = model_path or PRETRAINED_MODELS.get(backend_id, backend_id)
        try:
            self.model = SentenceTransformer(source, device=device)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {source!r}: {exc}") from exc
        self.dimension = int(self.model.get_sentence_embedding_dimension())

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = self.model.encode(list(texts), convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(out, dtype=np.float64).reshape(len(texts), self.dimension)

    def fine_tune(self, pairs, config, on_epoch_end=None) -> TrainingLog:
        import torch

        torch.manual_seed(config.seed)
        model = self.model
        opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
        targets = torch.tensor([p.target for p in pairs], dtype=torch.float32)
        rng = np.random.default_rng(config.seed)

        def batch_cos(idx):
            feats_a = model.tokenize([pairs[i].text_a for i in idx])
            feats_b = model.tokenize([pairs[i].text_b for i in idx])
            feats_a = {k: v.to(model.device) for k, v in feats_a.items()}
            feats_b = {k: v.to(model.device) for k, v in feats_b.items()}
            ea = model(feats_a)["sentence_embedding"]
            eb = model(feats_b)["sentence_embedding"]
            return torch.nn.functional.cosine_similarity(ea, eb)

        def full_loss() -> float:
            model.eval()
            total = 0.0
            with torch.no_grad():
                for start in range(0, len(pairs), config.batch_size):
                    idx = list(range(start, min(start + config.batch_size, len(pairs))))
                    cos = batch_cos(idx).cpu()
                    total += float(((targets[idx] - cos) ** 2).sum())
            return total / len(pairs)

        log = TrainingLog(full_loss())
        for epoch in range(config.epochs):
            model.train()
            order = rng.permutation(len(pairs))
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size].tolist()
                cos = batch_cos(idx)
                loss = ((targets[idx].to(cos.device) - cos) ** 2).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
            epoch_loss = full_loss()
            if not math.isfinite(epoch_loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch} (lr={config.learning_rate})")
            log.epoch_losses.append(epoch_loss)
            if on_epoch_end is not None:
                on_epoch_end(epoch, self)
        model.eval()
        return log

    def save_state(self, directory: Path) -> dict:
        self.model.save(str(Path(directory) / self.STATE_DIR))
        return {"state_dir": self.STATE_DIR, "dimension": self.dimension}

    @classmethod
    def load_state(cls, directory: Path, meta: dict) -> "SentenceTransformerBackend":
        return cls(meta["backend_id"], model_path=str(Path(directory) / meta.get("state_dir", cls.STATE_DIR)))


# -- registry -------------------------------------------------------------------

_REGISTRY: dict[str, tuple[Callable[..., EmbeddingBackend], type[EmbeddingBackend]]] = {}


def register_backend(backend_id: str, factory: Callable[..., EmbeddingBackend], cls: type[EmbeddingBackend]) -> None:
    _REGISTRY[backend_id] = (factory, cls)


def registered_backends() -> list[str]:
    return sorted(_REGISTRY)


def make_backend(backend_id: str, **kwargs) -> EmbeddingBackend:
    """Instantiate a registered backend by id."""
    try:
        factory, _ = _REGISTRY[backend_id]
    except KeyError:
        raise BackendUnavailable(f"unknown backend {backend_id!r}; registered: {registered_backends()}") from None
    return factory(**kwargs)


def backend_class(backend_id: str) -> type[EmbeddingBackend]:
    try:
        return _REGISTRY[backend_id][1]
    except KeyError:
        raise BackendUnavailable(f"unknown backend {backend_id!r}") from None


register_backend(TOY_BACKEND_ID, lambda dimension=64, seed=0: ToyHashEncoder(dimension, seed), ToyHashEncoder)
for _name in PRETRAINED_MODELS:
    register_backend(
        _name,
        lambda _id=_name, **kw: SentenceTransformerBackend(_id, **kw),
        SentenceTransformerBackend,
    )
