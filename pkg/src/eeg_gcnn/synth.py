"""Seeded synthetic EEG cohort for desk-scale runs.

Each electrode carries spatially correlated pink-noise background, an
occipital alpha rhythm and common 50 Hz mains pickup. Two knobs separate
the classes:

* ``alpha_separation`` scales healthy subjects' alpha amplitude by
  ``1 + alpha_separation``;
* ``coupling_separation`` is the fraction of the patients' alpha that is
  generated independently per hemisphere instead of by one shared source,
  which lowers inter-hemispheric alpha coherence.

With both knobs at zero the two classes are drawn from the same
distribution.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .config import SynthConfig
from .formats import write_manifest, write_signal
from .graph_builder import angles_to_unit, load_angle_table
from .signal_core import ELECTRODE_ALIASES, Label

ELECTRODES = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz", "C4", "T8",
              "P7", "P3", "Pz", "P4", "P8", "O1", "Oz", "O2")
N_BACKGROUND_SOURCES = 6
BACKGROUND_UV = 12.0
ALPHA_UV = 8.0
SOURCE_WIDTH_RAD = 0.6
ALPHA_WIDTH_RAD = 0.7
AMP_JITTER = 0.3


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance 1/f noise."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def narrowband(rng: np.random.Generator, n: int, fs: float, center: float, half_width: float = 1.0):
    sos = signal.butter(4, [center - half_width, center + half_width], btype="bandpass", fs=fs,
                        output="sos")
    x = signal.sosfiltfilt(sos, rng.standard_normal(n))
    return x / x.std()


def _positions() -> dict[str, np.ndarray]:
    table = load_angle_table()
    return {e: angles_to_unit(*table[e]) for e in ELECTRODES}


def _gain(pos: np.ndarray, center: np.ndarray, width: float) -> float:
    ang = np.arccos(np.clip(pos @ center, -1.0, 1.0))
    return float(np.exp(-0.5 * (ang / width) ** 2))


def synth_subject(rng: np.random.Generator, label: Label, n_samples: int, cfg: SynthConfig) -> np.ndarray:
    """Electrodes x samples array in microvolts for one subject."""
    fs = cfg.sample_rate_hz
    pos = _positions()
    data = np.zeros((len(ELECTRODES), n_samples))

    for _ in range(N_BACKGROUND_SOURCES):
        center = rng.standard_normal(3)
        center[2] = abs(center[2])
        center /= np.linalg.norm(center)
        src = pink_noise(rng, n_samples)
        for i, e in enumerate(ELECTRODES):
            data[i] += BACKGROUND_UV * _gain(pos[e], center, SOURCE_WIDTH_RAD) * src
    for i in range(len(ELECTRODES)):
        data[i] += 0.5 * BACKGROUND_UV * pink_noise(rng, n_samples)

    amp = ALPHA_UV * np.exp(AMP_JITTER * rng.standard_normal())
    independent = 0.0
    if label == Label.HEALTHY:
        amp *= 1.0 + cfg.alpha_separation
    else:
        independent = float(np.clip(cfg.coupling_separation, 0.0, 1.0))
    peak = rng.uniform(9.0, 11.0)
    shared = narrowband(rng, n_samples, fs, peak)
    hemis = {side: narrowband(rng, n_samples, fs, peak) for side in (-1, 0, 1)}
    occ_left, occ_right = pos["O1"], pos["O2"]
    for i, e in enumerate(ELECTRODES):
        p = pos[e]
        side = int(np.sign(round(p[0], 6)))
        center = occ_left if side < 0 else occ_right if side > 0 else pos["Oz"]
        g = _gain(p, center, ALPHA_WIDTH_RAD)
        wave = np.sqrt(1 - independent) * shared + np.sqrt(independent) * hemis[side]
        data[i] += amp * g * wave

    t = np.arange(n_samples) / fs
    phase = rng.uniform(0, 2 * np.pi)
    for i in range(len(ELECTRODES)):
        gain = cfg.mains_uv * (1.0 + 0.3 * rng.standard_normal())
        data[i] += gain * np.sin(2 * np.pi * 50.0 * t + phase + 0.05 * rng.standard_normal())
    return data


def generate(out_dir: str | Path, cfg: SynthConfig, seed: int = 0) -> Path:
    """Write a manifest plus signal files for ``cfg.n_per_class`` subjects per class.

    Each subject's recording is split into ``cfg.blocks`` consecutive files
    (trials), which are preprocessed and windowed independently.

    Patient files use the older 10-20 names (T3/T4/T5/T6) for the temporal
    and parietal sites, as clinical recordings do.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_samples = int(round(cfg.duration_s * cfg.sample_rate_hz))
    entries = []
    root = np.random.SeedSequence(seed)
    subjects = [(Label.PATIENT, i) for i in range(cfg.n_per_class)] + \
               [(Label.HEALTHY, i) for i in range(cfg.n_per_class)]
    for (label, i), child in zip(subjects, root.spawn(len(subjects))):
        rng = np.random.default_rng(child)
        sid = f"{label.text[0].upper()}{i:04d}"
        names = [ELECTRODE_ALIASES.get(e, e) if label == Label.PATIENT else e for e in ELECTRODES]
        files = []
        full = synth_subject(rng, label, n_samples, cfg)
        for b, block in enumerate(np.array_split(full, cfg.blocks, axis=1)):
            rel = f"signals/{sid}_b{b}.sig"
            write_signal(out_dir / rel, block, names, cfg.sample_rate_hz)
            files.append(rel)
        entries.append({
            "subject_id": sid,
            "label": label.text,
            "files": files,
            "sample_rate_hz": cfg.sample_rate_hz,
            "channels": names,
        })
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, entries)
    return manifest
