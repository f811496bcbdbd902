"""Pairwise dissimilarity as a weighted sum of per-component score distances.

``D(x, y) = b + sum_j w_j |t_xj - t_yj|``, with the weights learned by
cross-validated Lasso on rated stimulus pairs.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisError, PcaScores, SpectralBasis, project
from .filterbank import FilterBank, band_powers
from .lasso import lambda_max, lasso_cv
from .signal import Rng, Signal

__all__ = [
    "DissimModel",
    "RatingsTable",
    "SplitReport",
    "signal_scores",
    "local_distances",
    "predict_dissimilarity",
    "design_matrix",
    "fit_lasso",
    "evaluate_split",
    "component_ablation",
]


def signal_scores(s: Signal, bank: FilterBank, basis: SpectralBasis) -> PcaScores:
    """Band powers of ``s`` in the basis domain, projected onto the basis."""
    if basis.bank_id != bank.identity:
        raise BasisError(f"basis was trained on bank {basis.bank_id}, not {bank.identity}")
    return project(basis, band_powers(s, bank, basis.domain))


def local_distances(tx: PcaScores, ty: PcaScores) -> np.ndarray:
    if tx.basis_id != ty.basis_id:
        raise BasisError("scores come from different bases")
    if len(tx) != len(ty):
        raise ValueError("score vectors differ in length")
    return np.abs(tx.t - ty.t)


@dataclass
class DissimModel:
    weights: np.ndarray
    intercept: float = 0.0
    lam: float = 0.0
    basis_id: str = ""
    cv_report: dict = field(default_factory=dict)
    converged: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.intercept):
            raise ValueError("non-finite dissimilarity weights")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def k(self) -> int:
        return self.weights.size

    def predict_distances(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return self.intercept + d[..., : self.k] @ self.weights

    def to_dict(self) -> dict:
        out = {
            "w": self.weights.tolist(),
            "intercept": self.intercept,
            "lambda": self.lam,
            "basis_id": self.basis_id,
        }
        if self.cv_report:
            out["cv"] = self.cv_report
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DissimModel":
        return cls(d["w"], float(d.get("intercept", 0.0)), float(d.get("lambda", 0.0)),
                   d.get("basis_id", ""), d.get("cv", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DissimModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_dissimilarity(m: DissimModel, x: Signal, y: Signal, bank: FilterBank, basis: SpectralBasis) -> float:
    """Full chain: band powers, projection, local distances, weighted sum plus intercept."""
    if m.basis_id and m.basis_id != basis.identity:
        raise BasisError("model was trained on a different basis")
    if m.k > basis.k:
        raise BasisError(f"model has {m.k} weights but the basis only {basis.k} components")
    tx = signal_scores(x, bank, basis)
    ty = signal_scores(y, bank, basis)
    return float(m.predict_distances(local_distances(tx, ty)))


@dataclass
class RatingsTable:
    entries: list  # (stim_a, stim_b, rating)

    def __post_init__(self):
        clean = []
        for a, b, r in self.entries:
            r = float(r)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"rating {r} for ({a}, {b}) outside [0, 1]")
            clean.append((str(a), str(b), r))
        self.entries = clean

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return sorted({a for a, _, _ in self.entries} | {b for _, b, _ in self.entries})

    def pairs(self, include_self: bool = False) -> list:
        return [e for e in self.entries if include_self or e[0] != e[1]]

    @classmethod
    def from_rows(cls, rows, average=np.mean) -> "RatingsTable":
        """Pool repeated ratings of the same unordered pair with ``average``."""
        pooled = defaultdict(list)
        for a, b, r in rows:
            key = (a, b) if a <= b else (b, a)
            pooled[key].append(float(r))
        return cls([(a, b, float(average(v))) for (a, b), v in sorted(pooled.items())])

    @classmethod
    def read_csv(cls, path, average=np.mean) -> "RatingsTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"stim_a", "stim_b", "rating"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            rows = [(r["stim_a"].strip(), r["stim_b"].strip(), float(r["rating"])) for r in reader]
        return cls.from_rows(rows, average)

    def resolve(self, known) -> None:
        known = set(known)
        for sid in self.ids:
            if sid not in known:
                raise KeyError(f"ratings refer to unknown stimulus {sid!r}")


def design_matrix(table: RatingsTable, scores: dict, include_self: bool = False, columns=None):
    """Local-distance rows and ratings for every pair in ``table``."""
    table.resolve(scores)
    rows = table.pairs(include_self)
    if not rows:
        raise ValueError("ratings table has no usable pairs")
    X = np.array([local_distances(scores[a], scores[b]) for a, b, _ in rows])
    if columns is not None:
        X = X[:, list(columns)]
    y = np.array([r for _, _, r in rows])
    return X, y


def fit_lasso(X, y, lambdas=None, folds: int = 10, rng: Rng | None = None, basis_id: str = "") -> DissimModel:
    """Lasso weights with the penalty picked by k-fold cross-validation.

    A single-value ``lambdas`` skips cross-validation and fits that penalty.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("design matrix and ratings disagree in length")
    res = lasso_cv(X, y, lambdas, folds, rng if rng is not None else Rng(0))
    report = {
        "folds": res.folds,
        "lambdas": res.lambdas.tolist(),
        "mse": [None if not math.isfinite(v) else float(v) for v in res.cv_mse],
        "lambda_max": lambda_max(X, y),
    }
    return DissimModel(res.weights, res.intercept, res.lam, basis_id, report, res.converged)


def r_squared(y, pred) -> float:
    y = np.asarray(y, dtype=np.float64)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        return math.nan
    return 1.0 - float(((y - pred) ** 2).sum()) / sst


@dataclass
class SplitReport:
    r2: np.ndarray
    train_rows: int
    test_rows: int
    degenerate: bool = False

    @property
    def mean(self) -> float:
        return float(np.mean(self.r2)) if not self.degenerate else math.nan

    @property
    def sd(self) -> float:
        return float(np.std(self.r2, ddof=1)) if self.r2.size > 1 and not self.degenerate else math.nan

    def to_dict(self) -> dict:
        return {
            "r2_mean": None if math.isnan(self.mean) else self.mean,
            "r2_sd": None if math.isnan(self.sd) else self.sd,
            "repeats": int(self.r2.size),
            "train_rows": self.train_rows,
            "test_rows": self.test_rows,
            "degenerate": self.degenerate,
        }


def _split_sizes(n: int, train_frac: float) -> tuple[int, int]:
    n_train = int(round(train_frac * n))
    if n_train < 2 or n - n_train < 2:
        raise ValueError(f"{n} rows are too few for a {train_frac:.0%} train / test split")
    return n_train, n - n_train


def evaluate_split(X, y, train_frac: float = 0.8, repeats: int = 100, rng: Rng | None = None,
                   folds: int = 10, lambdas=None) -> SplitReport:
    """Test-set R² over repeated random train/test splits.

    Each repeat refits the cross-validated Lasso on its training rows; the
    fold count is capped at the training-set size.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n == 0:
        raise ValueError("empty ratings table")
    n_train, n_test = _split_sizes(n, train_frac)
    rng = rng if rng is not None else Rng(0)
    if np.ptp(y) == 0.0:
        return SplitReport(np.full(repeats, np.nan), n_train, n_test, degenerate=True)
    out = np.empty(repeats)
    for i in range(repeats):
        sub = rng.spawn(i)
        perm = sub.permutation(n)
        tr, te = perm[:n_train], perm[n_train:]
        m = fit_lasso(X[tr], y[tr], lambdas, min(folds, n_train), sub)
        out[i] = r_squared(y[te], m.predict_distances(X[te]))
    degenerate = bool(np.isnan(out).any())
    return SplitReport(out, n_train, n_test, degenerate)


def component_ablation(X, y, train_frac: float = 0.8, repeats: int = 20, rng: Rng | None = None,
                       folds: int = 10) -> dict:
    """Mean test R² using component ``i`` alone and components ``1..i`` together.

    Every curve point uses the same sequence of splits so the curves are
    comparable point by point.
    """
    X = np.asarray(X, dtype=np.float64)
    k = X.shape[1]
    rng = rng if rng is not None else Rng(0)
    solo, cumulative = [], []
    degenerate = False
    for i in range(k):
        a = evaluate_split(X[:, [i]], y, train_frac, repeats, rng, folds)
        b = evaluate_split(X[:, : i + 1], y, train_frac, repeats, rng, folds)
        degenerate |= a.degenerate or b.degenerate
        solo.append(a.mean)
        cumulative.append(b.mean)
    return {"solo": solo, "cumulative": cumulative, "degenerate": degenerate}
