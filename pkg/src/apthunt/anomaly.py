"""One-class SVM anomaly filter over embedded events.

Learns the region occupied by benign event vectors; events whose decision
value falls at or below the threshold are kept as suspicious for the tagger.
The dual problem (minimize 0.5*a'Ka subject to 0 <= a_i <= 1/(nu*n),
sum(a) = 1, RBF kernel K) is solved by pairwise coordinate updates on the
maximal KKT-violating pair, which keeps the equality constraint exact at
every step. nu upper-bounds the training outlier fraction and lower-bounds
the support-vector fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentMismatchError, DimMismatchError, NonFiniteError
from .ingest import EventSequence


@dataclass(frozen=True)
class OcSvmModel:
    support_vectors: np.ndarray  # (m, k)
    alphas: np.ndarray  # (m,), each in (0, 1/(nu*n_train)]
    rho: float
    gamma: float
    nu: float
    converged: bool = True

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


def rbf_gamma(vectors: np.ndarray, mode: str = "dim") -> float:
    """Kernel width: 1/k by default, or the median pairwise-distance heuristic."""
    x = np.asarray(vectors, dtype=float)
    if mode == "dim":
        return 1.0 / x.shape[1]
    if mode == "median":
        n = x.shape[0]
        sample = x if n <= 500 else x[:: max(1, n // 500)][:500]
        sq = np.sum(sample**2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (sample @ sample.T)
        d2 = d2[np.triu_indices_from(d2, k=1)]
        med = float(np.median(d2[d2 > 0])) if np.any(d2 > 0) else 1.0
        return 1.0 / med
    raise ValueError(f"unknown gamma mode {mode!r}")


def _rbf_cross(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * ||a_i - b_j||^2), shape (len(a), len(b))."""
    sq_a = np.sum(a**2, axis=1)[:, None]
    sq_b = np.sum(b**2, axis=1)[None, :]
    d2 = np.maximum(sq_a + sq_b - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


def ocsvm_fit(
    vectors,
    nu: float = 0.5,
    gamma: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 100_000,
) -> OcSvmModel:
    """Train on (presumed) benign vectors.

    ``max_iter`` bounds the number of pair updates; if the KKT gap is still
    above ``tol`` the best iterate is returned with ``converged=False``.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 training vectors")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("training vectors contain non-finite values")
    if not 0.0 < nu <= 1.0:
        raise ValueError("nu must be in (0, 1]")
    n = x.shape[0]
    if gamma is None:
        gamma = rbf_gamma(x)
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")

    kernel = _rbf_cross(x, x, gamma)
    cap = 1.0 / (nu * n)

    # libsvm-style feasible start: fill the first floor(nu*n) coordinates
    alpha = np.zeros(n)
    n_full = int(np.floor(nu * n + 1e-12))
    alpha[:n_full] = cap
    if n_full < n:
        alpha[n_full] = 1.0 - cap * n_full
    grad = kernel @ alpha

    converged = False
    eps = 1e-12
    for _ in range(max_iter):
        can_up = alpha < cap - eps  # room to grow
        can_down = alpha > eps  # room to shrink
        i = int(np.flatnonzero(can_up)[np.argmin(grad[can_up])])
        j = int(np.flatnonzero(can_down)[np.argmax(grad[can_down])])
        if grad[j] - grad[i] < tol:
            converged = True
            break
        quad = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        step = (grad[j] - grad[i]) / max(quad, 1e-12)
        room_i = cap - alpha[i]
        room_j = alpha[j]
        if step >= room_i or step >= room_j:
            # land exactly on the binding bound
            if room_i <= room_j:
                step = room_i
                alpha[j] -= step
                alpha[i] = cap
            else:
                step = room_j
                alpha[i] += step
                alpha[j] = 0.0
        else:
            alpha[i] += step
            alpha[j] -= step
        grad += step * (kernel[:, i] - kernel[:, j])

    free = (alpha > eps) & (alpha < cap - eps)
    if np.any(free):
        rho = float(np.mean(grad[free]))
    else:
        upper = grad[alpha >= cap - eps]
        lower = grad[alpha <= eps]
        hi = float(np.max(upper)) if upper.size else float(np.min(grad))
        lo = float(np.min(lower)) if lower.size else float(np.max(grad))
        rho = 0.5 * (hi + lo)

    keep = alpha > eps
    return OcSvmModel(
        support_vectors=x[keep].copy(),
        alphas=alpha[keep].copy(),
        rho=rho,
        gamma=gamma,
        nu=nu,
        converged=converged,
    )


def ocsvm_decision(model: OcSvmModel, v) -> float | np.ndarray:
    """sum_i alpha_i * K(v, sv_i) - rho; positive means benign-like."""
    arr = np.asarray(v, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != model.dim:
        raise DimMismatchError(model.dim, arr.shape[1])
    scores = _rbf_cross(arr, model.support_vectors, model.gamma) @ model.alphas - model.rho
    return float(scores[0]) if single else scores


def filter_events(
    model: OcSvmModel,
    seq: EventSequence,
    vectors,
    threshold: float = 0.0,
) -> EventSequence:
    """Keep the suspicious subsequence: events with decision <= threshold."""
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != len(seq):
        raise AlignmentMismatchError(len(seq), arr.shape[0] if arr.ndim else 0)
    decisions = ocsvm_decision(model, arr)
    kept = tuple(
        e for e, d in zip(seq.events, decisions) if d <= threshold
    )
    return EventSequence(events=kept, origin=seq.origin)


def save_ocsvm(model: OcSvmModel, path: str | Path) -> None:
    doc = {
        "version": 1,
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.alphas.tolist(),
        "rho": model.rho,
        "gamma": model.gamma,
        "nu": model.nu,
        "converged": model.converged,
    }
    Path(path).write_text(json.dumps(doc))


def load_ocsvm(path: str | Path) -> OcSvmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported ocsvm model version: {doc.get('version')!r}")
    return OcSvmModel(
        support_vectors=np.array(doc["support_vectors"], dtype=float),
        alphas=np.array(doc["alphas"], dtype=float),
        rho=float(doc["rho"]),
        gamma=float(doc["gamma"]),
        nu=float(doc["nu"]),
        converged=bool(doc["converged"]),
    )
