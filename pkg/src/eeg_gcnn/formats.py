"""On-disk formats: signal container, manifest, feature store, checkpoint.

The byte layouts are documented in FORMATS.md at the repository root.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import canonical_json
from .dataset import WindowDataset
from .errors import DigestMismatch, InputError, MissingCheckpoint
from .neural import Architecture, ModelParams
from .signal_core import Label, Recording

SIGNAL_FORMAT = "eeg-gcnn-signal"
MANIFEST_FORMAT = "eeg-gcnn-manifest"
STORE_FORMAT = "eeg-gcnn-feature-store"
CHECKPOINT_MAGIC = b"EEGGCNN\x00"
FORMAT_VERSION = 1

STORE_INDEX = "index.json"
STORE_TABLE = "windows.f64"
RECORD_FLOATS = 8 * 6 + 8 * 8


def _dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# Signal container


def write_signal(path: str | Path, data: np.ndarray, channel_names, sample_rate_hz: float,
                 extra: dict | None = None) -> None:
    """One-line JSON header, newline, then little-endian float32 channel-major samples."""
    data = np.asarray(data)
    header = {
        "format": SIGNAL_FORMAT,
        "version": FORMAT_VERSION,
        "channel_names": list(channel_names),
        "sample_rate_hz": float(sample_rate_hz),
        "n_samples": int(data.shape[1]),
        "units": "uV",
        "dtype": "<f4",
        "layout": "channel-major",
    }
    if extra:
        header.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(canonical_json(header).encode() + b"\n")
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_signal(path: str | Path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"signal file not found: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    try:
        header = json.loads(raw[:newline])
    except (ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: bad signal header") from exc
    if header.get("format") != SIGNAL_FORMAT:
        raise InputError(f"{path}: not a signal container")
    n_ch, n_s = len(header["channel_names"]), header["n_samples"]
    body = np.frombuffer(raw[newline + 1:], dtype="<f4")
    if body.size != n_ch * n_s:
        raise InputError(f"{path}: expected {n_ch * n_s} samples, found {body.size}")
    return header, body.reshape(n_ch, n_s).astype(np.float64)


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    label: Label
    files: tuple[Path, ...]
    sample_rate_hz: float
    channels: tuple[str, ...]


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    doc = {"format": MANIFEST_FORMAT, "version": FORMAT_VERSION, "subjects": entries}
    Path(path).write_text(_dumps(doc) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate a manifest; file paths resolve relative to it."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported manifest format/version")
    seen = set()
    entries = []
    for item in doc["subjects"]:
        sid = str(item["subject_id"])
        if sid in seen:
            raise InputError(f"duplicate subject_id {sid!r}")
        seen.add(sid)
        try:
            label = Label.parse(item["label"])
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        files = tuple((path.parent / f) for f in item["files"])
        for f in files:
            if not f.is_file():
                raise InputError(f"subject {sid}: signal file not found: {f}")
        entries.append(ManifestEntry(sid, label, files, float(item["sample_rate_hz"]),
                                     tuple(item["channels"])))
    return entries


def load_block(entry: ManifestEntry, block: int) -> Recording:
    header, data = read_signal(entry.files[block])
    if tuple(header["channel_names"]) != entry.channels:
        raise InputError(f"{entry.files[block]}: channels differ from manifest")
    if float(header["sample_rate_hz"]) != entry.sample_rate_hz:
        raise InputError(f"{entry.files[block]}: sample rate differs from manifest")
    return Recording(entry.subject_id, entry.label, entry.sample_rate_hz, entry.channels, data)


# ---------------------------------------------------------------------------
# Feature store


def write_feature_store(directory: str | Path, data: WindowDataset, digest: str,
                        dropped: dict[str, int] | None = None) -> None:
    """Flat float64 table (one 112-value record per window) plus a JSON index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(data)
    table = np.concatenate(
        [data.features.reshape(n, -1), data.functional.reshape(n, -1)], axis=1
    ).astype("<f8")
    (directory / STORE_TABLE).write_bytes(table.tobytes())
    index = {
        "format": STORE_FORMAT,
        "version": FORMAT_VERSION,
        "config_digest": digest,
        "record_floats": RECORD_FLOATS,
        "n_records": n,
        "spatial_adjacency": data.spatial.tolist(),
        "subjects": [
            {
                "subject_id": e.subject_id,
                "label": Label(e.label).text,
                "offset": e.offset,
                "window_count": e.window_count,
                "window_index": data.window_index[e.offset:e.offset + e.window_count].tolist(),
            }
            for e in data.index()
        ],
        "totals": {Label(c).text: t for c, t in data.class_totals().items()},
        "dropped_windows": dict(sorted((dropped or {}).items())),
    }
    (directory / STORE_INDEX).write_text(_dumps(index) + "\n")


def store_digest(directory: str | Path) -> str | None:
    p = Path(directory) / STORE_INDEX
    if not p.is_file():
        return None
    return json.loads(p.read_text()).get("config_digest")


def read_feature_store(directory: str | Path, expect_digest: str | None = None) -> WindowDataset:
    directory = Path(directory)
    ipath = directory / STORE_INDEX
    if not ipath.is_file():
        raise InputError(f"no feature store at {directory}")
    index = json.loads(ipath.read_text())
    if index.get("format") != STORE_FORMAT:
        raise InputError(f"{ipath}: not a feature store index")
    if expect_digest is not None and index["config_digest"] != expect_digest:
        raise DigestMismatch(
            f"feature store digest {index['config_digest'][:12]} != config {expect_digest[:12]}"
        )
    n = index["n_records"]
    table = np.memmap(directory / STORE_TABLE, dtype="<f8", mode="r", shape=(n, RECORD_FLOATS))
    table = np.asarray(table, dtype=np.float64)
    sids, labels, widx = [], [], []
    for s in index["subjects"]:
        sids += [s["subject_id"]] * s["window_count"]
        labels += [int(Label.parse(s["label"]))] * s["window_count"]
        widx += s["window_index"]
    return WindowDataset(
        subject_ids=np.array(sids, dtype=object),
        labels=np.array(labels, dtype=int),
        window_index=np.array(widx, dtype=int),
        features=table[:, :48].reshape(n, 8, 6),
        functional=table[:, 48:].reshape(n, 8, 8),
        spatial=np.array(index["spatial_adjacency"], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Checkpoint


def write_checkpoint(path: str | Path, params: ModelParams, meta: dict) -> None:
    """Magic, uint32 header length, JSON header, then named little-endian float64 tensors."""
    names = sorted(params.tensors) + sorted(params.buffers)
    arrays = {**params.tensors, **params.buffers}
    tensors, offset = [], 0
    for name in names:
        arr = arrays[name]
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": FORMAT_VERSION,
        "architecture": params.architecture.value,
        "gcn_dims": list(params.gcn_dims),
        "hidden_dims": list(params.hidden_dims),
        "dropout_gcn": params.dropout_gcn,
        "dropout_linear": params.dropout_linear,
        "seed": params.seed,
        "trainable": sorted(params.tensors),
        "tensors": tensors,
        **meta,
    }
    blob = canonical_json(header).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: bad checkpoint magic")
    (length,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + length])
    if header["version"] != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {header['version']}")
    base = 12 + length
    trainable = set(header["trainable"])
    tensors, buffers = {}, {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=int))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=base + t["offset"])
        arr = arr.reshape(t["shape"]).astype(np.float64)
        (tensors if t["name"] in trainable else buffers)[t["name"]] = arr
    params = ModelParams(
        Architecture(header["architecture"]), tuple(header["gcn_dims"]), tuple(header["hidden_dims"]),
        header["dropout_gcn"], header["dropout_linear"], header["seed"], tensors, buffers,
    )
    return params, header
