"""Event embedding: token vectors plus PCA dimensionality reduction.

An event triple embeds as the concatenation of its subject, action and object
token vectors. Two token backends are provided: a deterministic feature
hasher (no external data needed) and a lookup table of precomputed vectors
loaded from disk, e.g. exported from a language model. A PCA model fitted on
the training corpus reduces the concatenated vectors to a compact feature
space for the detectors.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatchError
from .ingest import CanonicalEvent

_FRAGMENT_SPLIT = re.compile(r"[^0-9a-z]+")


class OovTokenError(KeyError):
    def __init__(self, token: str):
        super().__init__(f"token not in embedding table: {token!r}")
        self.token = token


class DegenerateInputError(ValueError):
    """PCA needs at least two sample vectors."""


@dataclass(frozen=True)
class EventVector:
    """Numeric feature vector for one event, tagged with its seq_id."""

    values: np.ndarray
    event_ref: int


def tokenize(token: str) -> list[str]:
    """Lowercase and split on path separators / non-alphanumerics."""
    return [f for f in _FRAGMENT_SPLIT.split(token.lower()) if f]


class FeatureHashEmbedder:
    """Deterministic signed feature hashing of token fragments.

    Each fragment lands in one of ``dim`` buckets with a +/-1 sign derived
    from a keyed blake2b digest, so the mapping is a pure function of
    (token, dim, seed). The result is L2-normalized when nonzero.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    def embed(self, token: str) -> np.ndarray:
        out = np.zeros(self.dim)
        for fragment in tokenize(token):
            digest = hashlib.blake2b(
                fragment.encode("utf-8"), digest_size=8, key=self._key
            ).digest()
            value = int.from_bytes(digest, "little")
            bucket = (value >> 1) % self.dim
            sign = 1.0 if value & 1 else -1.0
            out[bucket] += sign
        norm = np.linalg.norm(out)
        if norm > 0.0:
            out /= norm
        return out


class ExternalTableEmbedder:
    """Lookup of precomputed token vectors with a configurable OOV policy.

    Lookups are case-insensitive. Policies for out-of-vocabulary tokens:
    ``zero`` (zero vector), ``hash`` (feature-hash fallback, the default) or
    ``error`` (raise OovTokenError).
    """

    def __init__(
        self,
        table: dict[str, np.ndarray],
        dim: int,
        oov: str = "hash",
        hash_seed: int = 0,
    ):
        if oov not in ("zero", "hash", "error"):
            raise ValueError(f"unknown oov policy {oov!r}")
        self.dim = dim
        self.oov = oov
        self.table = {}
        for token, vec in table.items():
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (dim,):
                raise DimMismatchError(dim, vec.shape[-1] if vec.ndim else 0, token)
            self.table[token.lower()] = vec
        self._fallback = FeatureHashEmbedder(dim, hash_seed)

    def embed(self, token: str) -> np.ndarray:
        hit = self.table.get(token.lower())
        if hit is not None:
            return hit.copy()
        if self.oov == "zero":
            return np.zeros(self.dim)
        if self.oov == "hash":
            return self._fallback.embed(token)
        raise OovTokenError(token)


TokenEmbedder = FeatureHashEmbedder | ExternalTableEmbedder


def load_embedding_table(path: str | Path, oov: str = "hash") -> ExternalTableEmbedder:
    """Load a `token<TAB>v1 v2 ... vd` file into an ExternalTableEmbedder."""
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        token, _, rest = line.partition("\t")
        try:
            vec = np.array([float(x) for x in rest.split()])
        except ValueError:
            raise DimMismatchError(dim or -1, 0, f"line {line_no}") from None
        if vec.size == 0:
            raise DimMismatchError(dim or -1, 0, f"line {line_no}")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DimMismatchError(dim, vec.size, f"line {line_no}")
        table[token] = vec
    if dim is None:
        raise ValueError(f"empty embedding table: {path}")
    return ExternalTableEmbedder(table, dim, oov=oov)


def embed_token(embedder: TokenEmbedder, token: str) -> np.ndarray:
    return embedder.embed(token)


def embed_event(embedder: TokenEmbedder, event: CanonicalEvent) -> EventVector:
    """Concatenate subject/action/object token vectors (length 3*dim)."""
    values = np.concatenate(
        [
            embedder.embed(event.subject),
            embedder.embed(event.action),
            embedder.embed(event.object),
        ]
    )
    return EventVector(values=values, event_ref=event.seq_id)


def embed_events(embedder: TokenEmbedder, events) -> np.ndarray:
    """Embed a batch of events into an (n, 3*dim) float64 matrix."""
    if not events:
        return np.zeros((0, 3 * embedder.dim))
    return np.stack([embed_event(embedder, e).values for e in events])


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]


def pca_fit(vectors: np.ndarray, k: int) -> PcaModel:
    """Fit PCA by eigendecomposition of the sample covariance.

    Components are the top-k eigenvectors sorted by descending eigenvalue,
    with the sign of each fixed so its first nonzero coordinate is positive.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    n, d = x.shape
    if n < 2:
        raise DegenerateInputError(f"need at least 2 vectors, got {n}")
    if not 1 <= k <= min(d, n):
        raise ValueError(f"k must be in [1, min(d={d}, n={n})], got {k}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(eigvals)[::-1][:k]
    variance = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T.copy()
    for row in components:
        nonzero = np.nonzero(np.abs(row) > 1e-12)[0]
        if nonzero.size and row[nonzero[0]] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def pca_transform(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """Project one vector or a batch onto the fitted components."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.input_dim:
        raise DimMismatchError(model.input_dim, v.shape[-1])
    return (v - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.k:
        raise DimMismatchError(model.k, z.shape[-1])
    return z @ model.components + model.mean


def save_pca(model: PcaModel, path: str | Path) -> None:
    doc = {
        "version": 1,
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "explained_variance": model.explained_variance.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_pca(path: str | Path) -> PcaModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported PCA model version: {doc.get('version')!r}")
    return PcaModel(
        mean=np.array(doc["mean"], dtype=float),
        components=np.array(doc["components"], dtype=float),
        explained_variance=np.array(doc["explained_variance"], dtype=float),
    )
