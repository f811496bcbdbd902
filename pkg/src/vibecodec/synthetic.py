"""Seeded synthetic stimuli: spectrally tilted noise with known parameters."""

from __future__ import annotations

import numpy as np

from .filterbank import intensity_band_power
from .signal import Rng, Signal

__all__ = ["tilted_noise", "synthetic_corpus"]


def tilted_noise(rng: Rng, slope: float, n: int = 2800, rate: float = 2800.0, label: str = "noise") -> Signal:
    """Gaussian noise with a power spectrum proportional to ``f ** slope``.

    ``slope`` 0 is white; negative slopes favour low frequencies. The
    output has unit variance.
    """
    X = np.fft.rfft(rng.normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    f[0] = f[1]
    x = np.fft.irfft(X * f ** (slope / 2.0), n)
    return Signal(x / x.std(), rate, label)


def synthetic_corpus(count: int = 18, seed: int = 0, slope_range=(-2.0, 2.0), level_jitter_db: float = 1.0,
                     n: int = 2800, rate: float = 2800.0, equalize: bool = True) -> list[Signal]:
    """``count`` tilted-noise stimuli labelled ``s00``, ``s01``, ...

    Slopes are drawn uniformly from ``slope_range``. With ``equalize`` every
    stimulus is scaled to unit 80-200 Hz power before a random level offset
    of up to ``level_jitter_db`` is applied.
    """
    rng = Rng(seed)
    slopes = slope_range[0] + (slope_range[1] - slope_range[0]) * rng.uniform(count)
    jitter = level_jitter_db * (2.0 * rng.uniform(count) - 1.0)
    out = []
    for i in range(count):
        s = tilted_noise(rng.spawn(i), float(slopes[i]), n, rate, f"s{i:02d}")
        if equalize:
            s = s.scaled(1.0 / np.sqrt(intensity_band_power(s)))
        out.append(s.scaled(10.0 ** (jitter[i] / 20.0)))
    return out
