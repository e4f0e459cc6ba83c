"""UWB pulse spectrum sampling and band-averaged received power."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import MissingFrequency

# two-sided -10 dB width of a Gaussian power spectrum = 2 sqrt(2 ln 10) sigma
TEN_DB_WIDTH_FACTOR = 2.0 * math.sqrt(2.0 * math.log(10.0))
NO_COVERAGE = -math.inf


@dataclass(frozen=True)
class UwbBand:
    center_frequency: float = 3.994e9
    bandwidth: float = 468e6
    sample_count: int = 9

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not (self.center_frequency > 0 and self.bandwidth >= 0):
            raise ValueError("need a positive center frequency and bandwidth >= 0")
        if self.bandwidth / 2 >= self.center_frequency:
            raise ValueError("band extends to non-positive frequencies")

    @property
    def spectral_sigma(self):
        return self.bandwidth / TEN_DB_WIDTH_FACTOR

    @property
    def samples(self):
        return band_samples(self)

    @property
    def frequencies(self):
        return np.array([f for f, _ in self.samples])

    @property
    def weights(self):
        return np.array([w for _, w in self.samples])


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 0.0
    max_path_loss_db: float = 90.0

    @property
    def threshold_dbm(self):
        return self.tx_power_dbm - self.max_path_loss_db


def band_samples(band):
    """Equally spaced (frequency, weight) pairs across the band.

    Weights follow the Gaussian power spectrum |S(f)|^2 and sum to one.
    """
    n = band.sample_count
    fc = band.center_frequency
    if n == 1:
        return [(fc, 1.0)]
    half = 0.5 * band.bandwidth
    # symmetric offsets so f_k - fc == -(f_{n-1-k} - fc) exactly
    offsets = np.linspace(-half, half, n)
    offsets = 0.5 * (offsets - offsets[::-1])
    sigma = band.spectral_sigma
    w = np.exp(-(offsets ** 2) / sigma ** 2)  # |S|^2 with S = exp(-x^2 / 2 sigma^2)
    w = w / w.sum()
    return [(float(fc + o), float(wk)) for o, wk in zip(offsets, w)]


def watts_to_dbm(p_w):
    p_w = np.asarray(p_w, dtype=float)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(p_w / 1e-3)
    return out if out.ndim else float(out)


def band_average(amplitudes, weights):
    """sum_k w_k |sum_p a_p(f_k)|^2 for an (npath, nfreq) amplitude array."""
    a = np.asarray(amplitudes, dtype=complex).reshape(-1, len(weights))
    field = a.sum(axis=0)
    return float(np.dot(weights, field.real ** 2 + field.imag ** 2))


def band_averaged_power(paths, band, budget=LinkBudget()):
    """Band-averaged received power in dBm, or ``-inf`` when no path exists.

    Each path must already carry amplitudes (``path.amplitude``) at every
    band sample frequency.
    """
    if not paths:
        return NO_COVERAGE
    samples = band_samples(band)
    amps = np.zeros((len(paths), len(samples)), dtype=complex)
    for i, p in enumerate(paths):
        for k, (f, _) in enumerate(samples):
            try:
                amps[i, k] = p.amplitude[f]
            except KeyError:
                raise MissingFrequency(f"path lacks amplitude at {f:.6e} Hz") from None
    ratio = band_average(amps, np.array([w for _, w in samples]))
    p_tx_w = 1e-3 * 10.0 ** (budget.tx_power_dbm / 10.0)
    return watts_to_dbm(p_tx_w * ratio)
