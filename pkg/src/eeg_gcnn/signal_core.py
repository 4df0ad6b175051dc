"""Preprocessing of raw multichannel recordings.

Bipolar montage derivation, resampling to 250 Hz, 1 Hz highpass, 50 Hz
notch, and segmentation into contiguous 10 s windows. Every function is
pure and deterministic; arrays are ``(n_channels, n_samples)`` in
microvolts unless stated otherwise.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import InvalidCutoff, InvalidRate, MissingChannel, ShapeMismatch

logger = logging.getLogger(__name__)

TARGET_RATE_HZ = 250.0
WINDOW_S = 10.0

BIPOLAR_PAIRS: tuple[tuple[str, str], ...] = (
    ("F7", "F3"),
    ("F8", "F4"),
    ("T7", "C3"),
    ("T8", "C4"),
    ("P7", "P3"),
    ("P8", "P4"),
    ("O1", "P3"),
    ("O2", "P4"),
)
MONTAGE_CHANNELS: tuple[str, ...] = tuple(f"{a}-{c}" for a, c in BIPOLAR_PAIRS)

# Old 10-20 names used by clinical systems for the same sites.
ELECTRODE_ALIASES = {"T7": "T3", "T8": "T4", "P7": "T5", "P8": "T6"}

RESAMPLE_KAISER_BETA = 14.0
RESAMPLE_HALF_TAPS = 20
RESAMPLE_CUTOFF = 0.9
HIGHPASS_ORDER = 4
NOTCH_Q = 30.0


class Label(enum.IntEnum):
    """Class label; the patient class is the positive class (index 1)."""

    HEALTHY = 0
    PATIENT = 1

    @classmethod
    def parse(cls, value: "str | int | Label") -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        if key in ("patient", "diseased"):
            return cls.PATIENT
        if key == "healthy":
            return cls.HEALTHY
        raise ValueError(f"unknown label {value!r}; expected 'patient' or 'healthy'")

    @property
    def text(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Recording:
    """One subject's continuous multichannel signal."""

    subject_id: str
    label: Label
    sample_rate_hz: float
    channel_names: tuple[str, ...]
    data: np.ndarray  # (n_channels, n_samples)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != len(self.channel_names):
            raise ShapeMismatch(
                f"data shape {data.shape} does not match {len(self.channel_names)} channels"
            )
        if not self.sample_rate_hz > 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "label", Label.parse(self.label))

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[self.channel_names.index(name)]
        except ValueError:
            raise MissingChannel(name) from None


@dataclass(frozen=True)
class MontageRecording(Recording):
    """Recording restricted to the bipolar montage channels."""


@dataclass(frozen=True)
class Window:
    subject_id: str
    label: Label
    index: int
    samples: np.ndarray  # (8, 2500)


def _resolve(raw: Recording, name: str) -> np.ndarray:
    if name in raw.channel_names:
        return raw.channel(name)
    alias = ELECTRODE_ALIASES.get(name)
    if alias is not None and alias in raw.channel_names:
        return raw.channel(alias)
    raise MissingChannel(name)


def derive_bipolar_montage(
    raw: Recording, pair_map: Sequence[tuple[str, str]] = BIPOLAR_PAIRS
) -> MontageRecording:
    """Build bipolar channels as anode minus cathode, in ``pair_map`` order.

    Electrodes may be named with either the 10-10 labels (T7, P7, ...) or
    their older 10-20 aliases (T3, T5, ...).
    """
    rows = [_resolve(raw, anode) - _resolve(raw, cathode) for anode, cathode in pair_map]
    return MontageRecording(
        subject_id=raw.subject_id,
        label=raw.label,
        sample_rate_hz=raw.sample_rate_hz,
        channel_names=tuple(f"{a}-{c}" for a, c in pair_map),
        data=np.vstack(rows) if rows else np.empty((0, raw.n_samples)),
    )


def _check_rate(*rates: float) -> None:
    for rate in rates:
        if not (np.isfinite(rate) and rate > 0):
            raise InvalidRate(f"sample rate must be positive, got {rate}")


def resample(
    x: np.ndarray, from_hz: float, to_hz: float = TARGET_RATE_HZ, axis: int = -1
) -> np.ndarray:
    """Polyphase FIR resampling.

    The anti-aliasing lowpass is a Kaiser-windowed FIR with its cutoff at
    0.9 times the Nyquist frequency of the lower rate. The output has
    ``round(n * to_hz / from_hz)`` samples along ``axis``.
    """
    _check_rate(from_hz, to_hz)
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[axis]
    n_out = int(round(n_in * to_hz / from_hz))
    ratio = Fraction(to_hz / from_hz).limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    if up == down:
        return x.copy()
    max_rate = max(up, down)
    taps = signal.firwin(
        2 * RESAMPLE_HALF_TAPS * max_rate + 1,
        RESAMPLE_CUTOFF / max_rate,
        window=("kaiser", RESAMPLE_KAISER_BETA),
    )
    y = signal.resample_poly(x, up, down, axis=axis, window=taps)
    return np.take(y, np.arange(n_out), axis=axis)


def highpass_filter(
    x: np.ndarray, sample_rate_hz: float, cutoff_hz: float = 1.0, axis: int = -1
) -> np.ndarray:
    """Zero-phase 4th-order Butterworth highpass (applied forward and backward)."""
    _check_rate(sample_rate_hz)
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate_hz / 2})")
    sos = signal.butter(HIGHPASS_ORDER, cutoff_hz, btype="highpass", fs=sample_rate_hz, output="sos")
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=axis)


def notch_filter(
    x: np.ndarray, sample_rate_hz: float, notch_hz: float = 50.0, axis: int = -1
) -> np.ndarray:
    """Zero-phase second-order IIR notch with Q = 30."""
    _check_rate(sample_rate_hz)
    if not 0 < notch_hz < sample_rate_hz / 2:
        raise InvalidCutoff(f"notch {notch_hz} Hz outside (0, {sample_rate_hz / 2})")
    b, a = signal.iirnotch(notch_hz, NOTCH_Q, fs=sample_rate_hz)
    return signal.filtfilt(b, a, np.asarray(x, dtype=np.float64), axis=axis)


def preprocess(
    raw: Recording,
    pair_map: Sequence[tuple[str, str]] = BIPOLAR_PAIRS,
    target_hz: float = TARGET_RATE_HZ,
    highpass_hz: float = 1.0,
    notch_hz: float = 50.0,
) -> MontageRecording:
    """Montage, resample, highpass, then notch."""
    montage = derive_bipolar_montage(raw, pair_map)
    data = resample(montage.data, montage.sample_rate_hz, target_hz)
    data = highpass_filter(data, target_hz, highpass_hz)
    data = notch_filter(data, target_hz, notch_hz)
    return MontageRecording(
        subject_id=raw.subject_id,
        label=raw.label,
        sample_rate_hz=target_hz,
        channel_names=montage.channel_names,
        data=data,
    )


def segment_windows(
    rec: Recording, window_s: float = WINDOW_S, start_index: int = 0
) -> list[Window]:
    """Cut ``rec`` into contiguous non-overlapping windows.

    The trailing partial window is discarded. ``start_index`` offsets the
    window numbering so that several blocks of one subject can share a
    single index sequence.
    """
    if rec.sample_rate_hz != TARGET_RATE_HZ:
        raise InvalidRate(f"windowing expects {TARGET_RATE_HZ} Hz, got {rec.sample_rate_hz}")
    size = int(round(window_s * rec.sample_rate_hz))
    count = rec.n_samples // size
    if count == 0:
        logger.warning(
            "recording %s is %.2f s long, shorter than one %.1f s window",
            rec.subject_id, rec.duration_s, window_s,
        )
    return [
        Window(
            subject_id=rec.subject_id,
            label=rec.label,
            index=start_index + k,
            samples=rec.data[:, k * size:(k + 1) * size].copy(),
        )
        for k in range(count)
    ]
