"""Welch spectra, band-power features and spectral coherence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

from .errors import BandOutOfRange, DegenerateSignal, LengthMismatch
from .signal_core import TARGET_RATE_HZ, Window

WINDOW_SAMPLES = 2500
SEGMENT_SAMPLES = 500
SEGMENT_OVERLAP = 250
MIN_SEGMENTS = 4
COHERENCE_BAND = (1.0, 40.0)


@dataclass(frozen=True)
class BandDefinition:
    name: str
    low_hz: float
    high_hz: float


BANDS: tuple[BandDefinition, ...] = (
    BandDefinition("delta", 1.0, 4.0),
    BandDefinition("theta", 4.0, 7.5),
    BandDefinition("alpha", 7.5, 13.0),
    BandDefinition("lower_beta", 13.0, 16.0),
    BandDefinition("higher_beta", 16.0, 30.0),
    BandDefinition("gamma", 30.0, 40.0),
)
BAND_NAMES = tuple(b.name for b in BANDS)


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray  # density, uV^2/Hz; last axis is frequency


def _check_length(x: np.ndarray, n_samples: int | None) -> None:
    if n_samples is not None and x.shape[-1] != n_samples:
        raise LengthMismatch(f"expected {n_samples} samples, got {x.shape[-1]}")


def welch_psd(
    x: np.ndarray,
    sample_rate_hz: float = TARGET_RATE_HZ,
    n_samples: int | None = WINDOW_SAMPLES,
    nperseg: int = SEGMENT_SAMPLES,
    noverlap: int = SEGMENT_OVERLAP,
) -> PsdEstimate:
    """One-sided Welch PSD with Hann segments and density scaling.

    Works on a single channel or on the last axis of a stacked array.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_length(x, n_samples)
    freqs, power = signal.welch(
        x, fs=sample_rate_hz, window="hann", nperseg=nperseg, noverlap=noverlap,
        detrend="constant", scaling="density", axis=-1,
    )
    return PsdEstimate(freqs, power)


def band_power(psd: PsdEstimate, band: BandDefinition) -> np.ndarray | float:
    """Trapezoidal integral of the PSD over ``[low_hz, high_hz]``.

    Band edges that fall between frequency bins are linearly interpolated,
    which keeps the integral additive over adjacent bands.
    """
    freqs = psd.freqs_hz
    if not (band.low_hz < band.high_hz and band.low_hz >= freqs[0] and band.high_hz <= freqs[-1]):
        raise BandOutOfRange(
            f"band {band.name} [{band.low_hz}, {band.high_hz}] outside [{freqs[0]}, {freqs[-1]}]"
        )
    inner = (freqs > band.low_hz) & (freqs < band.high_hz)
    grid = np.concatenate(([band.low_hz], freqs[inner], [band.high_hz]))
    power = np.asarray(psd.power)
    flat = power.reshape(-1, power.shape[-1])
    vals = np.empty((flat.shape[0], grid.size))
    for row, p in enumerate(flat):
        vals[row] = np.interp(grid, freqs, p)
    out = integrate.trapezoid(vals, grid, axis=-1).reshape(power.shape[:-1])
    return float(out) if out.ndim == 0 else out


def extract_features(w: Window | np.ndarray, sample_rate_hz: float = TARGET_RATE_HZ) -> np.ndarray:
    """Band-power feature matrix, channels x bands (8 x 6)."""
    samples = w.samples if isinstance(w, Window) else np.asarray(w, dtype=np.float64)
    psd = welch_psd(samples, sample_rate_hz)
    return np.stack([band_power(psd, b) for b in BANDS], axis=-1)


def _check_segments(n: int, nperseg: int, noverlap: int) -> None:
    if n < nperseg or (n - noverlap) // (nperseg - noverlap) < MIN_SEGMENTS:
        raise LengthMismatch(
            f"{n} samples give fewer than {MIN_SEGMENTS} Welch segments of {nperseg}"
        )


def coherence_matrix(
    x: np.ndarray,
    sample_rate_hz: float = TARGET_RATE_HZ,
    band: tuple[float, float] = COHERENCE_BAND,
    nperseg: int = SEGMENT_SAMPLES,
    noverlap: int = SEGMENT_OVERLAP,
) -> np.ndarray:
    """Band-averaged coherence between every pair of rows of ``x``.

    Per frequency the coherence is ``|E[S_ij]| / sqrt(E[S_ii] E[S_jj])``
    where the expectations are Welch segment averages; the result is the
    arithmetic mean over the bins inside ``band``. Bins where either
    auto-spectrum vanishes contribute zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise LengthMismatch(f"expected (channels, samples), got shape {x.shape}")
    _check_segments(x.shape[1], nperseg, noverlap)
    freqs, cross = signal.csd(
        x[:, None, :], x[None, :, :], fs=sample_rate_hz, window="hann",
        nperseg=nperseg, noverlap=noverlap, detrend="constant", axis=-1,
    )
    keep = (freqs >= band[0]) & (freqs <= band[1])
    cross = cross[..., keep]
    auto = np.real(np.einsum("iif->if", cross))
    dead = ~np.any(auto > 0, axis=-1)
    if dead.any():
        raise DegenerateSignal(f"zero auto-spectrum in {band[0]}-{band[1]} Hz for rows {np.flatnonzero(dead).tolist()}")
    denom = np.sqrt(auto[:, None, :] * auto[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        per_freq = np.where(denom > 0, np.abs(cross) / denom, 0.0)
    coh = np.clip(per_freq.mean(axis=-1), 0.0, 1.0)
    return 0.5 * (coh + coh.T)


def spectral_coherence(
    x: np.ndarray, y: np.ndarray, sample_rate_hz: float = TARGET_RATE_HZ
) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"coherence needs equal 1-D inputs, got {x.shape} and {y.shape}")
    return float(coherence_matrix(np.vstack([x, y]), sample_rate_hz)[0, 1])
