"""PCA basis of band-power spectra: fit, projection, truncated reconstruction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filterbank import LINEAR_FLOOR, BandPowers

__all__ = [
    "BasisError",
    "SpectralBasis",
    "PcaScores",
    "fit_basis",
    "project",
    "reconstruct",
]


class BasisError(ValueError):
    """Incompatible or degenerate basis input."""


def _fix_signs(v: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every row made positive
    idx = np.argmax(np.abs(v), axis=1)
    s = np.sign(v[np.arange(v.shape[0]), idx])
    s[s == 0] = 1.0
    return v * s[:, None]


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    mean: np.ndarray
    components: np.ndarray  # (k, n_bands), orthonormal rows
    eigenvalues: np.ndarray
    ratios: np.ndarray
    domain: str
    bank_id: str
    total_variance: float = float("nan")

    def __post_init__(self):
        m = np.array(self.mean, dtype=np.float64).reshape(-1)
        v = np.array(self.components, dtype=np.float64).reshape(-1, m.size)
        for arr in (m, v):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "components", v)
        object.__setattr__(self, "eigenvalues", np.array(self.eigenvalues, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "ratios", np.array(self.ratios, dtype=np.float64).reshape(-1))

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def n_bands(self) -> int:
        return self.mean.size

    @property
    def identity(self) -> str:
        h = hashlib.sha1()
        h.update(self.domain.encode())
        h.update(self.bank_id.encode())
        h.update(np.ascontiguousarray(self.mean).tobytes())
        h.update(np.ascontiguousarray(self.components).tobytes())
        return h.hexdigest()[:16]

    def truncated(self, k: int) -> "SpectralBasis":
        return SpectralBasis(
            self.mean, self.components[:k], self.eigenvalues[:k], self.ratios[:k],
            self.domain, self.bank_id, self.total_variance,
        )

    def to_dict(self) -> dict:
        return {
            "id": self.identity,
            "domain": self.domain,
            "bank": self.bank_id,
            "M": self.mean.tolist(),
            "V": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "ratios": self.ratios.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralBasis":
        M = np.asarray(d["M"], dtype=np.float64)
        V = np.asarray(d["V"], dtype=np.float64).reshape(-1, M.size)
        return cls(M, V, d["eigenvalues"], d["ratios"], d["domain"], d["bank"],
                   float(d.get("total_variance", float("nan"))))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SpectralBasis":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PcaScores:
    t: np.ndarray
    basis_id: str

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(t)):
            raise BasisError("non-finite PCA scores")
        t.flags.writeable = False
        object.__setattr__(self, "t", t)

    def __len__(self):
        return self.t.size


def _stack(corpus) -> tuple[np.ndarray, str, str]:
    corpus = list(corpus)
    if len(corpus) < 2:
        raise BasisError(f"need at least 2 spectra to fit a basis, got {len(corpus)}")
    banks = {p.bank_id for p in corpus}
    domains = {p.domain for p in corpus}
    if len(banks) != 1 or len(domains) != 1:
        raise BasisError(f"corpus mixes banks {sorted(banks)} / domains {sorted(domains)}")
    return np.vstack([p.values for p in corpus]), banks.pop(), domains.pop()


def fit_basis(corpus, k: int | None = None, variance: float | None = None) -> SpectralBasis:
    """Fit mean spectrum and principal components to a list of :class:`BandPowers`.

    Give either a component count ``k`` or a ``variance`` fraction; with a
    fraction, ``k`` is the smallest count whose explained ratios reach it.
    With neither, all components are kept.
    """
    if k is not None and variance is not None:
        raise ValueError("give k or variance, not both")
    P, bank_id, domain = _stack(corpus)
    n, d = P.shape
    M = P.mean(axis=0)
    C = np.cov(P, rowvar=False, ddof=1).reshape(d, d)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    total = float(np.trace(C))

    # identical rows leave only rounding noise in the covariance
    if total <= 1e-24 * max(1.0, float(np.mean(P * P))) * d:
        if k == 0:
            return SpectralBasis(M, np.zeros((0, d)), [], [], domain, bank_id, 0.0)
        raise BasisError("degenerate corpus: all spectra are identical (zero variance)")
    ratios = evals / total

    if variance is not None:
        if not 0 < variance <= 1:
            raise ValueError("variance target must lie in (0, 1]")
        cum = np.cumsum(ratios)
        k = int(np.searchsorted(cum, variance - 1e-12) + 1)
        k = min(k, d)
    elif k is None:
        k = d
    if not 0 <= k <= d:
        raise ValueError(f"k must lie in [0, {d}]")

    V = _fix_signs(evecs[:k]) if k else np.zeros((0, d))
    return SpectralBasis(M, V, evals[:k], ratios[:k], domain, bank_id, total)


def _check(basis: SpectralBasis, p: BandPowers):
    if p.bank_id != basis.bank_id or p.domain != basis.domain:
        raise BasisError(
            f"band powers ({p.bank_id}, {p.domain}) do not match basis ({basis.bank_id}, {basis.domain})"
        )


def project(basis: SpectralBasis, p: BandPowers) -> PcaScores:
    """Centred scores ``V @ (p - M)``."""
    _check(basis, p)
    return PcaScores(basis.components @ (p.values - basis.mean), basis.identity)


def reconstruct(basis: SpectralBasis, t, k_use: int | None = None) -> BandPowers:
    """``M + sum_j t_j V_j`` over the first ``k_use`` scores."""
    if isinstance(t, PcaScores):
        if t.basis_id != basis.identity:
            raise BasisError("scores were produced by a different basis")
        t = t.t
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if k_use is None:
        k_use = t.size
    if not 0 <= k_use <= min(t.size, basis.k):
        raise ValueError(f"k_use={k_use} outside [0, {min(t.size, basis.k)}]")
    P = basis.mean + t[:k_use] @ basis.components[:k_use]
    if basis.domain == "linear":
        P = np.maximum(P, LINEAR_FLOOR)
    return BandPowers(P, basis.domain, basis.bank_id)
