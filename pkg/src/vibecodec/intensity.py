"""Perceived intensity of noisy vibrations from their 80-200 Hz band power."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filterbank import intensity_band_power
from .signal import Signal, SignalError, windows

__all__ = [
    "IntensityModel",
    "NonStationarity",
    "fit_intensity",
    "predict_intensity",
    "equalization_gain",
    "non_stationarity",
    "read_gains_csv",
    "judgments_from_gains",
]

WINDOW_MS = 100.0
HOP_MS = 50.0


@dataclass(frozen=True)
class IntensityModel:
    """Affine map ``a * band_power + b``; ``r2`` is the fit's coefficient of determination."""

    a: float = 1.0
    b: float = 0.0
    r2: float | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"intensity slope must be positive, got {self.a}")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "r2": self.r2}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityModel":
        return cls(float(d["a"]), float(d["b"]), None if d.get("r2") is None else float(d["r2"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "IntensityModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class NonStationarity:
    sigma: float
    mean: float
    window_ms: float = WINDOW_MS
    hop_ms: float = HOP_MS
    n_windows: int = 0

    @property
    def relative(self) -> float:
        return self.sigma / self.mean if self.mean else math.inf


def fit_intensity(powers, judgments) -> IntensityModel:
    """Ordinary least squares of intensity judgments on band power."""
    x = np.asarray(powers, dtype=np.float64)
    y = np.asarray(judgments, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("powers and judgments must be vectors of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points to fit an intensity model")
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate design: all band powers are equal")
    xc = x - x.mean()
    sxx = xc @ xc
    a = float(xc @ (y - y.mean()) / sxx)
    b = float(y.mean() - a * x.mean())
    resid = y - (a * x + b)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return IntensityModel(a, b, r2)


def predict_intensity(m: IntensityModel, s: Signal) -> float:
    return m.a * intensity_band_power(s) + m.b


def equalization_gain(s: Signal, ref_power: float) -> float:
    """Amplitude gain that brings the 80-200 Hz band power of ``s`` to ``ref_power``."""
    p = intensity_band_power(s)
    if p <= 0.0:
        raise SignalError(f"{s.label or 'signal'}: zero power in the intensity band")
    return math.sqrt(ref_power / p)


def non_stationarity(s: Signal, m: IntensityModel = IntensityModel()) -> NonStationarity:
    """Population standard deviation of predicted intensity over 100 ms windows (50 ms hop)."""
    if s.duration < 2 * WINDOW_MS * 1e-3 - 0.5 / s.sample_rate:
        raise SignalError(f"{s.label or 'signal'}: need at least 200 ms, got {s.duration * 1e3:.0f} ms")
    vals = np.array([predict_intensity(m, w) for w in windows(s, WINDOW_MS, HOP_MS)])
    return NonStationarity(float(vals.std()), float(vals.mean()), WINDOW_MS, HOP_MS, vals.size)


def read_gains_csv(path) -> list[tuple[str, str, float]]:
    """Rows of ``stimulus,participant,gain``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"stimulus", "participant", "gain"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for line in reader:
            gain = float(line["gain"])
            if not gain > 0:
                raise ValueError(f"{path}: non-positive gain for {line['stimulus']}")
            rows.append((line["stimulus"].strip(), line["participant"].strip(), gain))
    return rows


def judgments_from_gains(rows, aggregate: str = "geometric") -> dict[str, float]:
    """Per-stimulus intensity judgment as 1/gain, pooled across participants.

    ``aggregate`` is ``"geometric"`` (geometric mean) or ``"mean"``.
    """
    per = defaultdict(list)
    for stim, _, gain in rows:
        per[stim].append(1.0 / gain)
    out = {}
    for stim, vals in sorted(per.items()):
        v = np.asarray(vals)
        if aggregate == "geometric":
            out[stim] = float(np.exp(np.log(v).mean()))
        elif aggregate == "mean":
            out[stim] = float(v.mean())
        else:
            raise ValueError(f"unknown aggregate {aggregate!r}")
    return out
