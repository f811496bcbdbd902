"""Classical MDS, Procrustes superimposition and score-axis correlation arrows."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import pearson_r

__all__ = [
    "DistanceMatrix",
    "Embedding",
    "ProcrustesResult",
    "pairwise_distances",
    "classical_mds",
    "kruskal_stress",
    "procrustes",
    "component_arrow",
]


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        d = np.array(self.values, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.all(np.isfinite(d)):
            raise ValueError("distance matrix has non-finite entries")
        if np.max(np.abs(d - d.T), initial=0.0) > 1e-12:
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("distance matrix has a nonzero diagonal")
        if np.any(d < 0):
            raise ValueError("distance matrix has negative entries")
        d.flags.writeable = False
        object.__setattr__(self, "values", d)
        labels = tuple(self.labels) or tuple(str(i) for i in range(d.shape[0]))
        if len(labels) != d.shape[0]:
            raise ValueError("label count does not match matrix size")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_pairs(cls, labels, pairs, fill: float | None = None) -> "DistanceMatrix":
        """Build from ``(a, b, value)`` triples; unlisted off-diagonal pairs need ``fill``."""
        labels = list(labels)
        idx = {s: i for i, s in enumerate(labels)}
        d = np.full((len(labels), len(labels)), np.nan)
        np.fill_diagonal(d, 0.0)
        for a, b, v in pairs:
            if a == b:
                continue
            d[idx[a], idx[b]] = d[idx[b], idx[a]] = v
        if np.isnan(d).any():
            if fill is None:
                raise ValueError("ratings do not cover every pair of stimuli")
            d[np.isnan(d)] = fill
        return cls(d, tuple(labels))


def pairwise_distances(coords) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def kruskal_stress(d, dhat) -> float:
    """Stress-1 over the upper triangle: sqrt(sum (d - dhat)^2 / sum d^2)."""
    d = np.asarray(d)
    iu = np.triu_indices(d.shape[0], 1)
    den = float((d[iu] ** 2).sum())
    if den == 0.0:
        return 0.0
    return math.sqrt(float(((d[iu] - np.asarray(dhat)[iu]) ** 2).sum()) / den)


@dataclass
class Embedding:
    coords: np.ndarray
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stress: float = 0.0
    labels: tuple = ()
    padded: bool = False

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2:
            raise ValueError("coordinates must be an n x dims array")
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if not self.labels:
            self.labels = tuple(str(i) for i in range(self.coords.shape[0]))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "coords": self.coords.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "stress": self.stress,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def _orient(v: np.ndarray) -> np.ndarray:
    # largest-magnitude coordinate of every axis made positive
    idx = np.argmax(np.abs(v), axis=0)
    s = np.sign(v[idx, np.arange(v.shape[1])])
    s[s == 0] = 1.0
    return v * s


def classical_mds(d: DistanceMatrix, dims: int = 2) -> Embedding:
    """Torgerson embedding from the double-centred squared distances.

    All eigenvalues of the centred Gram matrix are kept in the result,
    negative ones included. If fewer than ``dims`` are positive the missing
    axes are zero and the embedding is flagged ``padded``.
    """
    if not isinstance(d, DistanceMatrix):
        d = DistanceMatrix(d)
    n = d.n
    if n < dims + 1:
        raise ValueError(f"need at least {dims + 1} points for a {dims}-d embedding")
    D2 = d.values**2
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ D2 @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]

    tol = 1e-12 * max(1.0, abs(evals[0]))
    pos = int(np.sum(evals[:dims] > tol))
    coords = np.zeros((n, dims))
    coords[:, :pos] = _orient(evecs[:, :pos] * np.sqrt(evals[:pos]))
    coords -= coords.mean(axis=0)
    padded = pos < dims
    if padded:
        warnings.warn(f"only {pos} positive eigenvalues; remaining axes set to zero", RuntimeWarning, stacklevel=2)
    stress = kruskal_stress(d.values, pairwise_distances(coords))
    return Embedding(coords, evals, stress, d.labels, padded)


@dataclass
class ProcrustesResult:
    aligned: np.ndarray
    residuals: np.ndarray  # per-point distance to target
    total_error: float  # sum of squared residuals
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def to_dict(self, labels=None) -> dict:
        return {
            "labels": list(labels) if labels is not None else None,
            "aligned": self.aligned.tolist(),
            "residuals": self.residuals.tolist(),
            "total_error": self.total_error,
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }


def procrustes(target, source) -> ProcrustesResult:
    """Best similarity transform (reflections allowed) of ``source`` onto ``target``."""
    X = np.asarray(target.coords if isinstance(target, Embedding) else target, dtype=np.float64)
    Y = np.asarray(source.coords if isinstance(source, Embedding) else source, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"configurations differ in shape: {X.shape} vs {Y.shape}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    X0, Y0 = X - mx, Y - my
    ny = float((Y0 * Y0).sum())
    if ny == 0.0:
        raise ValueError("degenerate source: all points coincide")
    U, sig, Vt = np.linalg.svd(Y0.T @ X0)
    R = U @ Vt
    s = float(sig.sum()) / ny
    aligned = s * Y0 @ R + mx
    res = np.sqrt(((X - aligned) ** 2).sum(axis=1))
    return ProcrustesResult(aligned, res, float((res**2).sum()), s, R, mx - s * my @ R)


def component_arrow(scores, emb: Embedding, j: int = 0) -> tuple:
    """Pearson correlation of the ``j``-th score with each embedding axis.

    ``scores`` is an ``n x k`` array (or list of score vectors) in the same
    stimulus order as ``emb``. Axes with no spread give NaN.
    """
    t = np.asarray([getattr(s, "t", s) for s in scores], dtype=np.float64)
    t = t.reshape(t.shape[0], -1)[:, j]
    if t.size != emb.n:
        raise ValueError("scores and embedding disagree on the number of stimuli")
    if t.size < 3:
        raise ValueError("need at least 3 stimuli")
    if np.ptp(t) == 0.0:
        raise ValueError(f"score {j} has zero variance across stimuli")
    out = []
    for axis in emb.coords.T:
        out.append(pearson_r(t, axis) if np.ptp(axis) > 0 else math.nan)
    return tuple(out)
