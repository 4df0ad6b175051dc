"""Per-window electrode graph: spatial, functional and combined adjacency."""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometry, KindMismatch, OffSphere, ShapeMismatch
from .signal_core import BIPOLAR_PAIRS, Window
from .spectral import coherence_matrix

SPHERE_TOL = 1e-6


class AdjacencyKind(enum.Enum):
    SPATIAL = "spatial"
    FUNCTIONAL = "functional"
    COMBINED = "combined"


@dataclass(frozen=True)
class ElectrodePosition:
    channel_name: str
    x: float
    y: float
    z: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class AdjacencyMatrix:
    values: np.ndarray
    kind: AdjacencyKind


def load_angle_table(path=None) -> dict[str, tuple[float, float]]:
    """Read ``name azimuth_deg elevation_deg`` rows; ``#`` starts a comment."""
    if path is None:
        text = resources.files("eeg_gcnn").joinpath("data/electrodes_1020.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            name, az, el = line.split()
            table[name] = (float(az), float(el))
    return table


def angles_to_unit(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


@functools.lru_cache(maxsize=None)
def _positions(pairs: tuple[tuple[str, str], ...]) -> tuple[ElectrodePosition, ...]:
    table = load_angle_table()
    out = []
    for anode, cathode in pairs:
        mid = angles_to_unit(*table[anode]) + angles_to_unit(*table[cathode])
        mid /= np.linalg.norm(mid)
        out.append(ElectrodePosition(f"{anode}-{cathode}", *map(float, mid)))
    return tuple(out)


def standard_positions(
    pairs: Sequence[tuple[str, str]] = BIPOLAR_PAIRS,
) -> list[ElectrodePosition]:
    """Unit-sphere location of each bipolar channel.

    Each channel sits at the normalized midpoint of its two electrodes.
    """
    return list(_positions(tuple(tuple(p) for p in pairs)))


def geodesic_distance(p: ElectrodePosition, q: ElectrodePosition, r: float = 1.0) -> float:
    """Great-circle distance ``r * arccos(p.q / r^2)`` with the argument clamped."""
    for pt in (p, q):
        if abs(np.linalg.norm(pt.vector) - r) > SPHERE_TOL:
            raise OffSphere(f"{pt.channel_name} is not on the sphere of radius {r}")
    cos = np.dot(p.vector, q.vector) / r**2
    return float(r * np.arccos(np.clip(cos, -1.0, 1.0)))


def spatial_adjacency(
    positions: Sequence[ElectrodePosition], invert: bool = True
) -> AdjacencyMatrix:
    """Min-max scaled pairwise geodesic distances.

    With ``invert`` (the default) the scaled distance is turned into a
    proximity ``1 - d`` so that the nearest pair gets weight 1. The diagonal
    is zero.
    """
    m = len(positions)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dist[i, j] = dist[j, i] = geodesic_distance(positions[i], positions[j])
    off = ~np.eye(m, dtype=bool)
    lo, hi = dist[off].min(), dist[off].max()
    if hi - lo <= 0:
        raise DegenerateGeometry("all electrode pairs are equidistant; cannot min-max scale")
    scaled = (dist - lo) / (hi - lo)
    values = 1.0 - scaled if invert else scaled
    values[~off] = 0.0
    return AdjacencyMatrix(values, AdjacencyKind.SPATIAL)


@functools.lru_cache(maxsize=4)
def _cached_spatial(invert: bool) -> np.ndarray:
    values = spatial_adjacency(standard_positions(), invert=invert).values
    values.setflags(write=False)
    return values


def default_spatial_adjacency(invert: bool = True) -> AdjacencyMatrix:
    """Spatial adjacency of the fixed montage, computed once per process."""
    return AdjacencyMatrix(_cached_spatial(invert), AdjacencyKind.SPATIAL)


def functional_adjacency(w: Window | np.ndarray) -> AdjacencyMatrix:
    samples = w.samples if isinstance(w, Window) else np.asarray(w)
    values = coherence_matrix(samples)
    np.fill_diagonal(values, 0.0)
    return AdjacencyMatrix(values, AdjacencyKind.FUNCTIONAL)


def combine_adjacency(spatial: AdjacencyMatrix, functional: AdjacencyMatrix) -> AdjacencyMatrix:
    """Edge weights ``(A_s + A_f) / 2``."""
    if spatial.kind is not AdjacencyKind.SPATIAL or functional.kind is not AdjacencyKind.FUNCTIONAL:
        raise KindMismatch(f"expected (spatial, functional), got ({spatial.kind}, {functional.kind})")
    if spatial.values.shape != functional.values.shape:
        raise ShapeMismatch(f"{spatial.values.shape} vs {functional.values.shape}")
    return AdjacencyMatrix(0.5 * (spatial.values + functional.values), AdjacencyKind.COMBINED)
