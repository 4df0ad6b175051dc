"""In-memory window dataset and model input preparation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import ModelParams, normalize_adjacency

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class IndexEntry:
    subject_id: str
    label: int
    window_count: int
    offset: int


@dataclass
class WindowDataset:
    """All windows of a feature store, sorted by (subject, window index).

    ``functional`` holds coherence adjacencies; ``spatial`` is the single
    geometry-only adjacency shared by every window.
    """

    subject_ids: np.ndarray  # (N,) str
    labels: np.ndarray  # (N,) int, 1 = patient
    window_index: np.ndarray  # (N,) int
    features: np.ndarray  # (N, 8, 6)
    functional: np.ndarray  # (N, 8, 8)
    spatial: np.ndarray  # (8, 8)

    def __len__(self) -> int:
        return self.labels.size

    def combined(self, rows=slice(None)) -> np.ndarray:
        return 0.5 * (self.spatial[None] + self.functional[rows])

    def subset(self, rows) -> "WindowDataset":
        return WindowDataset(
            self.subject_ids[rows], self.labels[rows], self.window_index[rows],
            self.features[rows], self.functional[rows], self.spatial,
        )

    def rows_for(self, subjects) -> np.ndarray:
        return np.flatnonzero(np.isin(self.subject_ids, list(subjects)))

    def index(self) -> list[IndexEntry]:
        entries = []
        sids = self.subject_ids
        start = 0
        while start < sids.size:
            stop = start
            while stop < sids.size and sids[stop] == sids[start]:
                stop += 1
            entries.append(IndexEntry(str(sids[start]), int(self.labels[start]), stop - start, start))
            start = stop
        return entries

    def subject_labels(self) -> dict[str, int]:
        return {e.subject_id: e.label for e in self.index()}

    def class_totals(self) -> dict[int, int]:
        return {c: int((self.labels == c).sum()) for c in (0, 1)}


def log_features(features: np.ndarray) -> np.ndarray:
    return np.log10(np.maximum(features, LOG_FLOOR))


def fit_input_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and std of log band power, pooled over windows and channels."""
    logf = log_features(features).reshape(-1, features.shape[-1])
    std = logf.std(axis=0)
    return logf.mean(axis=0), np.where(std > 0, std, 1.0)


def set_input_stats(params: ModelParams, mean: np.ndarray, std: np.ndarray) -> None:
    params.buffers["input.mean"] = np.asarray(mean, dtype=params.dtype)
    params.buffers["input.std"] = np.asarray(std, dtype=params.dtype)


def prepare_inputs(
    params: ModelParams, features: np.ndarray, combined: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Model-ready arrays: standardized log band powers and normalized adjacency."""
    x = log_features(features)
    if "input.mean" in params.buffers:
        x = (x - params.buffers["input.mean"]) / params.buffers["input.std"]
    x = x.astype(params.dtype)
    adj = None
    if params.architecture.is_graph and combined is not None:
        adj = normalize_adjacency(combined).astype(params.dtype)
    return x, adj
