"""Signal container, file I/O, resampling, windowing and seeded noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

__all__ = [
    "Signal",
    "Rng",
    "SignalError",
    "load_signal",
    "save_signal",
    "resample",
    "gaussian_noise",
    "pearson_r",
    "windows",
]

# Kaiser-windowed sinc resampler parameters
RESAMPLE_TAPS_PER_BRANCH = 64
RESAMPLE_BETA = 8.6


class SignalError(ValueError):
    """Raised for unusable signal input (bad file, wrong rate, non-finite data)."""


@dataclass(frozen=True, eq=False)
class Signal:
    """A uniformly sampled mono waveform.

    Samples are stored as a read-only float64 array. ``label`` is a free-form
    identifier, normally the file stem.
    """

    samples: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise SignalError("signal contains non-finite samples")
        if not self.sample_rate > 0:
            raise SignalError(f"sample rate must be positive, got {self.sample_rate}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, gain: float) -> "Signal":
        return Signal(self.samples * gain, self.sample_rate, self.label)

    def with_label(self, label: str) -> "Signal":
        return Signal(self.samples, self.sample_rate, label)


class Rng:
    """Seeded standard-normal source.

    Uniform draws come from PCG64, whose stream is fixed for a given seed on
    every platform; normals are produced from them with the Box-Muller
    transform so the mapping from seed to samples is fully specified here.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1], keeps log finite
        u2 = self._gen.random(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = rad * np.cos(2.0 * np.pi * u2)
        z[1::2] = rad * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Independent child generator, deterministic in (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))


def load_signal(path, expected_rate: float | None = None, raw_rate: float | None = None) -> Signal:
    """Read a mono WAV (PCM16 or float32) or a raw little-endian float32 file.

    Raw files carry no header, so ``raw_rate`` must be supplied for them;
    files with a ``.f32`` or ``.raw`` suffix are treated as raw. If
    ``expected_rate`` is given, a file at any other rate is rejected rather
    than silently resampled.
    """
    path = Path(path)
    try:
        if path.suffix.lower() in (".f32", ".raw"):
            if raw_rate is None:
                raise SignalError(f"{path}: raw float32 input needs an explicit sample rate")
            data = np.fromfile(path, dtype="<f4").astype(np.float64)
            rate = float(raw_rate)
        else:
            rate, data = wavfile.read(path)
            rate = float(rate)
            if data.ndim > 1:
                if data.shape[1] != 1:
                    raise SignalError(f"{path}: {data.shape[1]} channels, expected mono")
                data = data[:, 0]
            if data.dtype == np.int16:
                data = data.astype(np.float64) / 32768.0
            elif data.dtype in (np.float32, np.float64):
                data = data.astype(np.float64)
            else:
                raise SignalError(f"{path}: unsupported sample format {data.dtype}")
    except SignalError:
        raise
    except (OSError, ValueError) as exc:
        raise SignalError(f"{path}: unreadable ({exc})") from exc

    if data.size == 0:
        raise SignalError(f"{path}: no samples")
    if not np.all(np.isfinite(data)):
        raise SignalError(f"{path}: non-finite samples")
    if expected_rate is not None and not math.isclose(rate, expected_rate):
        raise SignalError(f"{path}: sample rate {rate:g} Hz, expected {expected_rate:g} Hz")
    return Signal(data, rate, path.stem)


def save_signal(s: Signal, path, fmt: str | None = None) -> Path:
    """Write ``s`` as float32 WAV (default), PCM16 WAV (``fmt="pcm16"``) or raw float32."""
    path = Path(path)
    if fmt is None:
        fmt = "raw" if path.suffix.lower() in (".f32", ".raw") else "float32"
    if fmt == "raw":
        s.samples.astype("<f4").tofile(path)
    elif fmt == "float32":
        wavfile.write(path, int(round(s.sample_rate)), s.samples.astype(np.float32))
    elif fmt == "pcm16":
        pcm = np.clip(np.round(s.samples * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, int(round(s.sample_rate)), pcm)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def _resample_kernel(up: int, down: int) -> np.ndarray:
    m = max(up, down)
    ntaps = RESAMPLE_TAPS_PER_BRANCH * m + 1
    # unit DC gain; resample_poly applies the factor ``up`` itself
    return sps.firwin(ntaps, 1.0 / m, window=("kaiser", RESAMPLE_BETA))


def resample(s: Signal, target_rate: float) -> Signal:
    """Rational-ratio resampling with a Kaiser-windowed sinc kernel."""
    if not target_rate > 0:
        raise ValueError("target rate must be positive")
    if target_rate == s.sample_rate:
        return s
    ratio = Fraction(target_rate / s.sample_rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    h = _resample_kernel(up, down)
    y = sps.resample_poly(s.samples, up, down, window=h, padtype="line")
    return Signal(y, target_rate, s.label)


def gaussian_noise(rng: Rng, n: int, rate: float, label: str = "noise") -> Signal:
    if n <= 0:
        raise ValueError("noise length must be positive")
    return Signal(rng.normal(n), rate, label)


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson_r needs two vectors of equal length")
    if a.size < 3:
        raise ValueError("pearson_r needs at least 3 points")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(da @ da)
    sb = math.sqrt(db @ db)
    if sa == 0.0 or sb == 0.0:
        raise ValueError("pearson_r undefined for zero-variance input")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def windows(s: Signal, win_ms: float, hop_ms: float) -> list[Signal]:
    """Rectangular windows of ``win_ms`` every ``hop_ms``; a trailing partial window is dropped."""
    if win_ms <= 0 or hop_ms <= 0:
        raise ValueError("window and hop must be positive")
    win = int(round(win_ms * 1e-3 * s.sample_rate))
    hop = int(round(hop_ms * 1e-3 * s.sample_rate))
    if win < 1 or hop < 1:
        raise ValueError("window or hop shorter than one sample")
    if len(s) < win:
        raise SignalError(f"signal of {len(s)} samples is shorter than one {win}-sample window")
    count = (len(s) - win) // hop + 1
    return [
        Signal(s.samples[i * hop : i * hop + win], s.sample_rate, f"{s.label}[{i}]")
        for i in range(count)
    ]
