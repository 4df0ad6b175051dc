"""Experiment configuration and its canonical digest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .signal_core import BIPOLAR_PAIRS


@dataclass
class PreprocessConfig:
    target_hz: float = 250.0
    highpass_hz: float = 1.0
    notch_hz: float = 50.0
    pairs: list[list[str]] = field(default_factory=lambda: [list(p) for p in BIPOLAR_PAIRS])


@dataclass
class FeatureConfig:
    window_s: float = 10.0
    welch_segment_samples: int = 500
    welch_overlap_samples: int = 250
    coherence_low_hz: float = 1.0
    coherence_high_hz: float = 40.0
    # False averages the scaled geodesic distance itself instead of proximity.
    spatial_proximity: bool = True


@dataclass
class SplitConfig:
    k: int = 10
    test_fraction: float = 0.30


@dataclass
class TrainConfig:
    lr: float = 0.1
    decay_every: int = 20
    decay_factor: float = 0.1
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 10
    dropout_gcn: float = 0.1
    dropout_linear: float = 0.5
    dtype: str = "float32"


@dataclass
class SynthConfig:
    n_per_class: int = 60
    duration_s: float = 120.0
    sample_rate_hz: float = 500.0
    alpha_separation: float = 1.5
    coupling_separation: float = 0.5
    mains_uv: float = 5.0
    blocks: int = 1


@dataclass
class ExperimentConfig:
    architecture: str = "shallow"
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    SECTIONS = {
        "synth": ("seed", "synth"),
        "preprocess": ("preprocess",),
        "features": ("preprocess", "features"),
        "experiment": ("seed", "preprocess", "features", "split", "train"),
    }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {
            "preprocess": PreprocessConfig,
            "features": FeatureConfig,
            "split": SplitConfig,
            "train": TrainConfig,
            "synth": SynthConfig,
        }
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = sections[key](**value)
            elif key in ("architecture", "seed"):
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n")

    def digest(self, stage: str | None = None) -> str:
        """SHA-256 of the canonical JSON of the sections ``stage`` depends on.

        ``None`` digests the full config.
        """
        data = self.to_dict()
        if stage is not None:
            data = {k: data[k] for k in self.SECTIONS[stage]}
        return hashlib.sha256(canonical_json(data).encode()).hexdigest()

    def run_digest(self, architecture: str, subsample: float) -> str:
        payload = {"experiment": self.digest("experiment"), "architecture": architecture,
                   "subsample": subsample}
        return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))
