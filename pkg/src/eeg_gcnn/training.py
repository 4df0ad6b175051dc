"""Subject-disjoint splits, class weighting and the per-fold training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import neural
from .config import TrainConfig
from .dataset import WindowDataset, fit_input_stats, prepare_inputs, set_input_stats
from .errors import EmptyClass, InvalidFraction, NonFiniteLoss, NumericalError, TooFewSubjects
from .evaluation import aggregate_subject, roc_auc
from .neural import Architecture, Mode

logger = logging.getLogger(__name__)

EVAL_BATCH = 4096


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _by_class(subject_labels: Mapping[str, int]) -> dict[int, list[str]]:
    groups: dict[int, list[str]] = {0: [], 1: []}
    for sid in sorted(subject_labels):
        groups[int(subject_labels[sid])].append(sid)
    return groups


def split_test(
    subject_labels: Mapping[str, int], test_fraction: float = 0.30, seed: int = 0, min_per_class: int = 10
) -> tuple[list[str], list[str]]:
    """Class-stratified subject-level hold-out split.

    Returns sorted ``(train_val, test)`` subject lists. Each class
    contributes ``round(test_fraction * n_class)`` test subjects.
    """
    groups = _by_class(subject_labels)
    for label, members in groups.items():
        if len(members) < min_per_class:
            raise TooFewSubjects(f"class {label} has {len(members)} subjects, need {min_per_class}")
    rng = np.random.default_rng(seed)
    test: list[str] = []
    for label in (0, 1):
        members = groups[label]
        order = rng.permutation(len(members))
        n_test = _round_half_up(test_fraction * len(members))
        test.extend(members[i] for i in order[:n_test])
    test_set = set(test)
    train_val = [s for s in sorted(subject_labels) if s not in test_set]
    return train_val, sorted(test)


@dataclass(frozen=True)
class FoldPlan:
    test_subjects: tuple[str, ...]
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (train, val) per fold
    seed: int
    subject_labels: Mapping[str, int] = field(default_factory=dict, compare=False)

    @property
    def k(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_subjects": list(self.test_subjects),
            "folds": [{"train": list(t), "val": list(v)} for t, v in self.folds],
        }


def make_folds(
    train_val: Sequence[str],
    subject_labels: Mapping[str, int],
    k: int = 10,
    seed: int = 0,
    test_subjects: Sequence[str] = (),
) -> FoldPlan:
    """Class-stratified subject-level k-fold partition of ``train_val``."""
    subjects = sorted(train_val)
    labels = np.array([subject_labels[s] for s in subjects])
    for c in (0, 1):
        if (labels == c).sum() < k:
            raise TooFewSubjects(f"class {c} has {(labels == c).sum()} subjects, need >= {k}")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for tr, va in skf.split(np.zeros(len(subjects)), labels):
        folds.append((tuple(subjects[i] for i in tr), tuple(subjects[i] for i in va)))
    return FoldPlan(tuple(sorted(test_subjects)), tuple(folds), seed, dict(subject_labels))


def subsample_training(plan: FoldPlan, fraction: float = 0.10, seed: int = 0) -> FoldPlan:
    """Keep a class-stratified ``fraction`` of each fold's training subjects."""
    if not 0 < fraction <= 1:
        raise InvalidFraction(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return plan
    folds = []
    for f, (train, val) in enumerate(plan.folds):
        rng = np.random.default_rng([seed, f])
        kept: list[str] = []
        for members in _by_class({s: plan.subject_labels[s] for s in train}).values():
            if not members:
                continue
            n_keep = max(1, _round_half_up(fraction * len(members)))
            kept.extend(members[i] for i in rng.choice(len(members), n_keep, replace=False))
        folds.append((tuple(sorted(kept)), val))
    return FoldPlan(plan.test_subjects, tuple(folds), plan.seed, plan.subject_labels)


class ClassWeights(NamedTuple):
    patient: float
    healthy: float

    def by_index(self) -> np.ndarray:
        """Weights indexed by class label (0 = healthy, 1 = patient)."""
        return np.array([self.healthy, self.patient])


def class_weights(window_labels) -> ClassWeights:
    """Inverse window count per class over the training windows."""
    labels = np.asarray(window_labels).astype(int)
    n_pat = int((labels == 1).sum())
    n_healthy = int((labels == 0).sum())
    if n_pat == 0 or n_healthy == 0:
        raise EmptyClass(f"training windows: {n_pat} patient, {n_healthy} healthy")
    return ClassWeights(1.0 / n_pat, 1.0 / n_healthy)


@dataclass
class TrainRun:
    fold_index: int
    architecture: Architecture
    params: neural.ModelParams
    history: list[tuple[int, float, float, float]]  # (epoch, train loss, val AUC, val loss)
    config_digest: str
    best_epoch: int
    best_val_auc: float
    weights: ClassWeights
    gradient_subjects: frozenset[str]

    def summary(self) -> dict:
        return {
            "fold": self.fold_index,
            "architecture": self.architecture.value,
            "config_digest": self.config_digest,
            "best_epoch": self.best_epoch,
            "best_val_auc": self.best_val_auc,
            "class_weights": {"patient": self.weights.patient, "healthy": self.weights.healthy},
            "n_gradient_subjects": len(self.gradient_subjects),
            "history": [
                {"epoch": e, "train_loss": loss, "val_auc": auc, "val_loss": vloss}
                for e, loss, auc, vloss in self.history
            ],
        }


def predict(params: neural.ModelParams, data: WindowDataset, with_embedding: bool = False):
    """Eval-mode patient probabilities (and optionally embeddings) per window."""
    probs, embs = [], []
    for start in range(0, len(data), EVAL_BATCH):
        rows = slice(start, start + EVAL_BATCH)
        x, adj = prepare_inputs(params, data.features[rows], data.combined(rows))
        res = neural.forward(params, x, adj, Mode.EVAL)
        probs.append(res.probs.astype(np.float64))
        if with_embedding:
            embs.append(res.embedding.astype(np.float64))
    p = np.concatenate(probs) if probs else np.empty(0)
    if with_embedding:
        width = params.embedding_dim
        return p, np.concatenate(embs) if embs else np.empty((0, width))
    return p


def weighted_nll(patient_probs, labels, weights) -> float:
    """Class-weighted negative log-likelihood of window probabilities."""
    p = np.asarray(patient_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    p_true = np.where(labels == 1, p, 1.0 - p)
    return float(np.mean(np.asarray(weights)[labels] * -np.log(np.maximum(p_true, 1e-12))))


def subject_scores(subject_ids, probs) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for sid, p in zip(subject_ids, probs):
        out.setdefault(str(sid), []).append(float(p))
    return {sid: aggregate_subject(v) for sid, v in sorted(out.items())}


def subject_auc(data: WindowDataset, probs) -> float:
    scores = subject_scores(data.subject_ids, probs)
    labels = data.subject_labels()
    sids = sorted(scores)
    return roc_auc([scores[s] for s in sids], [labels[s] for s in sids])


def train_fold(
    data: WindowDataset,
    plan: FoldPlan,
    fold_index: int,
    architecture: Architecture | str,
    config: TrainConfig,
    seed: int = 0,
    config_digest: str = "",
) -> TrainRun:
    """Train one fold model; keep the epoch with the best validation subject AUC.

    Ties in AUC (frequent once small validation sets are perfectly ranked)
    go to the lower weighted validation loss; early stopping counts epochs
    without improvement of that ordering.

    Only the fold's training subjects ever enter a gradient step; the set of
    subjects that did is recorded and checked against validation and test.
    """
    architecture = Architecture(architecture)
    train_subj, val_subj = plan.folds[fold_index]
    train = data.subset(data.rows_for(train_subj))
    val = data.subset(data.rows_for(val_subj))
    weights = class_weights(train.labels)
    w = weights.by_index()

    dtype = np.dtype(config.dtype)
    params = neural.init_params(
        architecture, seed=int(np.random.default_rng([seed, fold_index]).integers(2**31)),
        dropout_gcn=config.dropout_gcn, dropout_linear=config.dropout_linear, dtype=dtype,
    )
    params.seed = seed
    set_input_stats(params, *fit_input_stats(train.features))
    x_train, adj_train = prepare_inputs(params, train.features, train.combined())
    y_train = train.labels
    sid_train = train.subject_ids

    state = neural.AdamState()
    history: list[tuple[int, float, float, float]] = []
    best_key = (-np.inf, -np.inf)
    best = (-np.inf, -1, params.copy())
    touched: set[str] = set()
    step = 0
    since_best = 0
    n = len(train)
    for epoch in range(config.max_epochs):
        lr = neural.learning_rate(epoch, config.lr, config.decay_every, config.decay_factor)
        order = np.random.default_rng([seed, fold_index, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            rows = np.sort(order[start:start + config.batch_size])
            if rows.size < 2:
                continue
            rng = np.random.default_rng([seed, fold_index, step])
            try:
                res = neural.forward(
                    params, x_train[rows], None if adj_train is None else adj_train[rows],
                    Mode.TRAIN, rng,
                )
                loss = neural.weighted_cross_entropy(res.logits, y_train[rows], w)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(f"loss {loss} at epoch {epoch}", fold_index)
                grads = neural.backward(params, res, y_train[rows], w)
            except NonFiniteLoss:
                raise
            except NumericalError as exc:
                raise NonFiniteLoss(f"fold {fold_index} epoch {epoch}: {exc}", fold_index) from exc
            touched.update(np.unique(sid_train[rows]).tolist())
            neural.adam_step(params.tensors, grads, state, lr)
            neural.update_running_stats(params, res.batch_stats)
            loss_sum += loss * rows.size
            step += 1
        train_loss = loss_sum / n
        val_probs = predict(params, val)
        val_auc = subject_auc(val, val_probs)
        val_loss = weighted_nll(val_probs, val.labels, w)
        history.append((epoch, float(train_loss), float(val_auc), val_loss))
        logger.debug("fold %d epoch %d loss %.4g val_auc %.4f val_loss %.4g",
                     fold_index, epoch, train_loss, val_auc, val_loss)
        key = (val_auc, -val_loss)
        if key > best_key:
            best_key = key
            best = (val_auc, epoch, params.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    leaked = touched & (set(val_subj) | set(plan.test_subjects))
    assert not leaked, f"fold {fold_index}: gradient steps used held-out subjects {sorted(leaked)}"
    return TrainRun(
        fold_index=fold_index,
        architecture=architecture,
        params=best[2],
        history=history,
        config_digest=config_digest,
        best_epoch=best[1],
        best_val_auc=float(best[0]),
        weights=weights,
        gradient_subjects=frozenset(touched),
    )
