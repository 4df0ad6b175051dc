"""Graph convolutional network, FCNN baseline, loss, gradients and Adam.

The model is written directly in numpy with hand-derived reverse-mode
gradients. A batch is a stack of window graphs: features ``(B, 8, 6)`` and
normalized adjacencies ``(B, 8, 8)``.

Layer order inside every hidden block is transform -> batch norm -> ReLU
-> dropout. Transforms followed by batch norm carry no bias (the batch-norm
shift takes that role); the output layer has a bias.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    NonFiniteActivation,
    NonFiniteGradient,
    ShapeMismatch,
    SingularDegree,
)

N_NODES = 8
N_FEATURES = 6
N_CLASSES = 2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Architecture(str, enum.Enum):
    SHALLOW = "shallow"
    DEEP = "deep"
    FCNN = "fcnn"

    @property
    def is_graph(self) -> bool:
        return self is not Architecture.FCNN


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


# (graph-conv output dims, hidden linear dims)
ARCH_DIMS: dict[Architecture, tuple[tuple[int, ...], tuple[int, ...]]] = {
    Architecture.SHALLOW: ((64, 128), ()),
    Architecture.DEEP: ((16, 16, 32, 64, 128), (30, 20)),
    Architecture.FCNN: ((), (64, 32)),
}

# Trainable parameter counts of the standard layouts (weights + bn scale/shift
# + output bias).
PARAM_COUNTS = {
    Architecture.SHALLOW: 9218,
    Architecture.DEEP: 16198,
    Architecture.FCNN: 5378,
}


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class GcnLayer:
    weight: np.ndarray
    activation: Activation = Activation.RELU


class WindowGraph(NamedTuple):
    features: np.ndarray  # (8, 6)
    adjacency: np.ndarray  # (8, 8) combined, zero diagonal


@dataclass
class ModelParams:
    """All tensors of one model.

    ``tensors`` holds the trainable arrays and ``buffers`` the batch-norm
    running statistics. Names follow ``gcn{i}.weight``, ``gcn{i}.bn_scale``,
    ``lin{j}.weight``, ``out.weight``, ``out.bias`` and ``*.bn_mean`` /
    ``*.bn_var`` for buffers.
    """

    architecture: Architecture
    gcn_dims: tuple[int, ...]
    hidden_dims: tuple[int, ...]
    dropout_gcn: float = 0.1
    dropout_linear: float = 0.5
    seed: int = 0
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        if self.architecture.is_graph:
            return self.gcn_dims[-1]
        return self.hidden_dims[-1]

    @property
    def gcn_layers(self) -> list[GcnLayer]:
        return [GcnLayer(self.tensors[f"gcn{i}.weight"]) for i in range(len(self.gcn_dims))]

    @property
    def linear_layers(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        layers = [(self.tensors[f"lin{j}.weight"], None) for j in range(len(self.hidden_dims))]
        layers.append((self.tensors["out.weight"], self.tensors["out.bias"]))
        return layers

    @property
    def dropout_rates(self) -> list[float]:
        return [self.dropout_gcn] * len(self.gcn_dims) + [self.dropout_linear] * len(self.hidden_dims)

    def n_trainable(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.architecture, self.gcn_dims, self.hidden_dims, self.dropout_gcn,
            self.dropout_linear, self.seed,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def expected_param_count(architecture: Architecture, gcn_dims, hidden_dims) -> int:
    n_in = N_FEATURES if architecture.is_graph else N_NODES * N_FEATURES
    total = 0
    for d in (*gcn_dims, *hidden_dims):
        total += n_in * d + 2 * d
        n_in = d
    return total + n_in * N_CLASSES + N_CLASSES


def init_params(
    architecture: Architecture | str,
    seed: int = 0,
    gcn_dims: tuple[int, ...] | None = None,
    hidden_dims: tuple[int, ...] | None = None,
    dropout_gcn: float = 0.1,
    dropout_linear: float = 0.5,
    dtype=np.float64,
) -> ModelParams:
    """Glorot-uniform weights, zero output bias, batch-norm scale 1 / shift 0.

    ``gcn_dims`` / ``hidden_dims`` override the standard widths (used for
    reduced models in gradient checks).
    """
    architecture = Architecture(architecture)
    default_gcn, default_hidden = ARCH_DIMS[architecture]
    gcn_dims = tuple(default_gcn if gcn_dims is None else gcn_dims)
    hidden_dims = tuple(default_hidden if hidden_dims is None else hidden_dims)
    if architecture.is_graph and not gcn_dims:
        raise ShapeMismatch("graph architectures need at least one graph-conv layer")
    if not architecture.is_graph and gcn_dims:
        raise ShapeMismatch("fcnn has no graph-conv layers")

    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    def glorot(n_in, n_out):
        bound = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-bound, bound, size=(n_in, n_out))

    def add_block(prefix, n_in, n_out):
        tensors[f"{prefix}.weight"] = glorot(n_in, n_out)
        tensors[f"{prefix}.bn_scale"] = np.ones(n_out)
        tensors[f"{prefix}.bn_shift"] = np.zeros(n_out)
        buffers[f"{prefix}.bn_mean"] = np.zeros(n_out)
        buffers[f"{prefix}.bn_var"] = np.ones(n_out)

    n_in = N_FEATURES if architecture.is_graph else N_NODES * N_FEATURES
    for i, d in enumerate(gcn_dims):
        add_block(f"gcn{i}", n_in, d)
        n_in = d
    for j, d in enumerate(hidden_dims):
        add_block(f"lin{j}", n_in, d)
        n_in = d
    tensors["out.weight"] = glorot(n_in, N_CLASSES)
    tensors["out.bias"] = np.zeros(N_CLASSES)

    params = ModelParams(
        architecture, gcn_dims, hidden_dims, dropout_gcn, dropout_linear, seed, tensors, buffers
    ).astype(dtype)
    count = params.n_trainable()
    if count != expected_param_count(architecture, gcn_dims, hidden_dims):
        raise AssertionError(f"parameter count {count} does not match layout")
    if (gcn_dims, hidden_dims) == ARCH_DIMS[architecture]:
        assert count == PARAM_COUNTS[architecture], (architecture, count)
    return params


# ---------------------------------------------------------------------------
# Graph primitives


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization ``D^-1/2 (A + I) D^-1/2`` with weighted degrees.

    Accepts a single ``(m, m)`` matrix or a stack ``(B, m, m)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"adjacency must be square, got {a.shape}")
    a_hat = a + np.eye(a.shape[-1])
    deg = a_hat.sum(axis=-1)
    if np.any(deg <= 0):
        raise SingularDegree("non-positive weighted degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[..., :, None] * a_hat * inv_sqrt[..., None, :]


def gcn_forward(
    h: np.ndarray, layer: GcnLayer, adj: np.ndarray
) -> np.ndarray:
    """``sigma(adj @ h @ W)`` for one graph (or a stack of graphs)."""
    w = layer.weight
    if h.shape[-1] != w.shape[0] or adj.shape[-1] != h.shape[-2]:
        raise ShapeMismatch(f"h {h.shape}, W {w.shape}, adj {adj.shape}")
    z = (adj @ h) @ w
    if layer.activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def global_mean_pool(h: np.ndarray) -> np.ndarray:
    """Mean over the node axis (second to last)."""
    return h.mean(axis=-2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Forward / backward


@dataclass
class ForwardResult:
    logits: np.ndarray  # (B, 2)
    embedding: np.ndarray  # (B, embedding_dim)
    batch_stats: dict[str, tuple[np.ndarray, np.ndarray]]  # prefix -> (mean, unbiased var)
    cache: list = field(default_factory=list, repr=False)

    @property
    def probs(self) -> np.ndarray:
        """Patient-class probability per window."""
        return softmax(self.logits)[:, 1]


def _batch_norm(z, prefix, params, mode, stats, cache_entry):
    flat = z.reshape(-1, z.shape[-1])
    if mode is Mode.TRAIN:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        n = flat.shape[0]
        stats[prefix] = (mean, var * n / max(n - 1, 1))
    else:
        mean = params.buffers[f"{prefix}.bn_mean"]
        var = params.buffers[f"{prefix}.bn_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (z - mean) * inv_std
    cache_entry.update(xhat=xhat, inv_std=inv_std)
    return params.tensors[f"{prefix}.bn_scale"] * xhat + params.tensors[f"{prefix}.bn_shift"]


def _dropout(h, rate, mode, rng, cache_entry):
    if mode is Mode.TRAIN and rate > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(h.shape) >= rate).astype(h.dtype) / (1.0 - rate)
        cache_entry["mask"] = mask
        return h * mask
    return h


def forward(
    params: ModelParams,
    features: np.ndarray,
    adjacency: np.ndarray | None = None,
    mode: Mode = Mode.EVAL,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    """Batched forward pass.

    ``features`` is ``(B, 8, 6)``; ``adjacency`` is the stack of
    *normalized* adjacencies ``(B, 8, 8)`` (ignored by the FCNN, which
    consumes the row-major flattened 48-vector).
    """
    dtype = params.dtype
    x = np.asarray(features, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (N_NODES, N_FEATURES):
        raise ShapeMismatch(f"features must be (B, {N_NODES}, {N_FEATURES}), got {x.shape}")
    stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    cache: list[dict] = []

    if params.architecture.is_graph:
        if adjacency is None:
            raise ShapeMismatch("graph architectures need an adjacency")
        adj = np.asarray(adjacency, dtype=dtype)
        if adj.ndim == 2:
            adj = adj[None]
        if adj.shape != (x.shape[0], N_NODES, N_NODES):
            raise ShapeMismatch(f"adjacency {adj.shape} does not match features {x.shape}")
        h = x
        for i in range(len(params.gcn_dims)):
            entry = {"kind": "gcn", "prefix": f"gcn{i}", "input": h, "adj": adj}
            p = adj @ h
            z = p @ params.tensors[f"gcn{i}.weight"]
            entry["prop"] = p
            y = _batch_norm(z, f"gcn{i}", params, mode, stats, entry)
            entry["pre_relu"] = y
            h = _dropout(np.maximum(y, 0.0), params.dropout_gcn, mode, rng, entry)
            cache.append(entry)
        h = global_mean_pool(h)
        cache.append({"kind": "pool", "n_nodes": N_NODES})
        embedding = h
    else:
        h = x.reshape(x.shape[0], -1)

    for j in range(len(params.hidden_dims)):
        entry = {"kind": "lin", "prefix": f"lin{j}", "input": h}
        z = h @ params.tensors[f"lin{j}.weight"]
        y = _batch_norm(z, f"lin{j}", params, mode, stats, entry)
        entry["pre_relu"] = y
        h = _dropout(np.maximum(y, 0.0), params.dropout_linear, mode, rng, entry)
        cache.append(entry)
    if not params.architecture.is_graph:
        embedding = h

    cache.append({"kind": "out", "input": h})
    logits = h @ params.tensors["out.weight"] + params.tensors["out.bias"]
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits in forward pass")
    return ForwardResult(logits, embedding, stats, cache)


def model_forward(
    params: ModelParams,
    window: WindowGraph,
    mode: Mode = Mode.EVAL,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-window convenience wrapper returning ``(logits, embedding)``."""
    adj = normalize_adjacency(window.adjacency) if params.architecture.is_graph else None
    res = forward(params, window.features[None], None if adj is None else adj[None], mode, rng)
    return res.logits[0], res.embedding[0]


def window_probability(logits: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(logits))[..., 1]


def weighted_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, class_weights
) -> float:
    """Batch mean of ``w[y] * -log softmax(logits)[y]``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=int)
    w = np.asarray(class_weights, dtype=logits.dtype)
    if logits.shape != (labels.shape[0], N_CLASSES):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    nll = -log_softmax(logits)[np.arange(labels.size), labels]
    return float(np.mean(w[labels] * nll))


def _bn_backward(dy, prefix, params, entry, grads, mode):
    xhat, inv_std = entry["xhat"], entry["inv_std"]
    k = dy.shape[-1]
    dy_f = dy.reshape(-1, k)
    xh_f = xhat.reshape(-1, k)
    grads[f"{prefix}.bn_scale"] = (dy_f * xh_f).sum(axis=0)
    grads[f"{prefix}.bn_shift"] = dy_f.sum(axis=0)
    dxhat = dy_f * params.tensors[f"{prefix}.bn_scale"]
    if mode is Mode.EVAL:
        return (dxhat * inv_std).reshape(dy.shape)
    n = dy_f.shape[0]
    dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xh_f * (dxhat * xh_f).sum(axis=0))
    return dz.reshape(dy.shape)


def backward(
    params: ModelParams,
    result: ForwardResult,
    labels: np.ndarray,
    class_weights,
    mode: Mode = Mode.TRAIN,
) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`weighted_cross_entropy` w.r.t. every tensor.

    ``mode`` must match the mode of the forward pass that produced
    ``result``.
    """
    labels = np.asarray(labels, dtype=int)
    b = labels.size
    w = np.asarray(class_weights, dtype=result.logits.dtype)
    grad_logits = softmax(result.logits)
    grad_logits[np.arange(b), labels] -= 1.0
    grad_logits *= (w[labels] / b)[:, None]

    grads: dict[str, np.ndarray] = {}
    g = grad_logits
    for entry in reversed(result.cache):
        kind = entry["kind"]
        if kind == "out":
            grads["out.weight"] = entry["input"].T @ g
            grads["out.bias"] = g.sum(axis=0)
            g = g @ params.tensors["out.weight"].T
        elif kind == "pool":
            g = np.repeat(g[:, None, :] / entry["n_nodes"], entry["n_nodes"], axis=1)
        else:
            prefix = entry["prefix"]
            if "mask" in entry:
                g = g * entry["mask"]
            g = g * (entry["pre_relu"] > 0)
            g = _bn_backward(g, prefix, params, entry, grads, mode)
            weight = params.tensors[f"{prefix}.weight"]
            if kind == "lin":
                grads[f"{prefix}.weight"] = entry["input"].T @ g
                g = g @ weight.T
            else:
                p = entry["prop"]
                grads[f"{prefix}.weight"] = np.einsum("bni,bnj->ij", p, g)
                g = np.swapaxes(entry["adj"], -1, -2) @ (g @ weight.T)
    for key, val in grads.items():
        if not np.all(np.isfinite(val)):
            raise NonFiniteGradient(f"non-finite gradient for {key}")
    return grads


def update_running_stats(params: ModelParams, batch_stats, momentum: float = BN_MOMENTUM) -> None:
    for prefix, (mean, var) in batch_stats.items():
        m = params.buffers[f"{prefix}.bn_mean"]
        v = params.buffers[f"{prefix}.bn_var"]
        m *= 1.0 - momentum
        m += momentum * mean
        v *= 1.0 - momentum
        v += momentum * var


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """In-place Adam update of ``tensors``; returns the advanced state."""
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for key, g in grads.items():
        p = tensors[key]
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)
    return state


def learning_rate(epoch: int, base_lr: float = 0.1, decay_every: int = 20, factor: float = 0.1) -> float:
    """Step schedule: ``base_lr * factor ** (epoch // decay_every)``."""
    return base_lr * factor ** (epoch // decay_every)
