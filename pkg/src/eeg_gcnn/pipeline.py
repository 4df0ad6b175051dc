"""Command implementations behind the CLI.

Every command stamps its outputs with the digest of the config sections it
depends on and refuses inputs stamped with a different digest.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np

from . import evaluation, formats, training
from .config import ExperimentConfig
from .dataset import WindowDataset
from .errors import DegenerateSignal, DigestMismatch, EEGGCNNError, InputError, MissingCheckpoint, NumericalError
from .graph_builder import default_spatial_adjacency, functional_adjacency
from .neural import Architecture
from .signal_core import Label, MontageRecording, preprocess, segment_windows
from .spectral import extract_features
from .synth import generate

logger = logging.getLogger(__name__)

WORKERS_ENV = "EEG_GCNN_WORKERS"
PREPROCESSED_INDEX = "preprocessed.json"
PLAN_FILE = "plan.json"
METRICS_FORMAT = "eeg-gcnn-metrics"


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


class CommandFailed(EEGGCNNError):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# synth


def cmd_synth(out_dir: str | Path, config: ExperimentConfig) -> Path:
    return generate(out_dir, config.synth, seed=config.seed)


# ---------------------------------------------------------------------------
# preprocess


def _preprocess_one(args):
    entry, out_dir, cfg, digest = args
    blocks = []
    try:
        for b in range(len(entry.files)):
            raw = formats.load_block(entry, b)
            rec = preprocess(raw, [tuple(p) for p in cfg.pairs], cfg.target_hz, cfg.highpass_hz,
                             cfg.notch_hz)
            rel = f"{entry.subject_id}/block_{b}.sig"
            formats.write_signal(out_dir / rel, rec.data, rec.channel_names, rec.sample_rate_hz,
                                 extra={"config_digest": digest, "subject_id": entry.subject_id,
                                        "label": entry.label.text})
            blocks.append(rel)
    except InputError as exc:
        return entry.subject_id, None, ("input", str(exc))
    except NumericalError as exc:
        return entry.subject_id, None, ("numerical", str(exc))
    return entry.subject_id, {"subject_id": entry.subject_id, "label": entry.label.text,
                              "blocks": blocks}, None


def cmd_preprocess(manifest: str | Path, out_dir: str | Path, config: ExperimentConfig) -> dict:
    """Montage, resample, highpass and notch every manifest recording."""
    out_dir = Path(out_dir)
    entries = formats.read_manifest(manifest)
    digest = config.digest("preprocess")
    results = _map(_preprocess_one, [(e, out_dir, config.preprocess, digest) for e in entries])
    subjects, failures = [], []
    for sid, record, err in results:
        if err is None:
            subjects.append(record)
        else:
            logger.error("preprocessing %s failed: %s", sid, err[1])
            failures.append({"subject_id": sid, "kind": err[0], "error": err[1]})
    index = {"config_digest": digest, "subjects": subjects, "failures": failures}
    _write_json(out_dir / PREPROCESSED_INDEX, index)
    if failures:
        code = 2 if all(f["kind"] == "numerical" for f in failures) else 1
        raise CommandFailed(f"{len(failures)} recording(s) failed preprocessing", code)
    return index


# ---------------------------------------------------------------------------
# featurize


def _featurize_one(args):
    subject, pre_dir, fcfg = args
    feats, funcs, idx = [], [], []
    dropped = 0
    next_index = 0
    for rel in subject["blocks"]:
        header, data = formats.read_signal(pre_dir / rel)
        rec = MontageRecording(subject["subject_id"], Label.parse(subject["label"]),
                               header["sample_rate_hz"], tuple(header["channel_names"]), data)
        windows = segment_windows(rec, fcfg.window_s, start_index=next_index)
        next_index += len(windows)
        for w in windows:
            try:
                a = functional_adjacency(w).values
            except DegenerateSignal:
                dropped += 1
                continue
            feats.append(extract_features(w))
            funcs.append(a)
            idx.append(w.index)
    return subject["subject_id"], subject["label"], feats, funcs, idx, dropped


def cmd_featurize(pre_dir: str | Path, store_dir: str | Path, config: ExperimentConfig) -> dict:
    """Window every preprocessed recording and persist features + coherence graphs.

    A store already stamped with the current digest is left untouched.
    """
    pre_dir = Path(pre_dir)
    index_path = pre_dir / PREPROCESSED_INDEX
    if not index_path.is_file():
        raise InputError(f"no preprocessed index at {index_path}")
    pre_index = json.loads(index_path.read_text())
    if pre_index["config_digest"] != config.digest("preprocess"):
        raise DigestMismatch("preprocessed data was produced with a different config")
    digest = config.digest("features")
    if formats.store_digest(store_dir) == digest:
        logger.info("feature store %s is up to date", store_dir)
        return _store_summary(formats.read_feature_store(store_dir, digest), skipped=True)

    subjects = sorted(pre_index["subjects"], key=lambda s: s["subject_id"])
    results = _map(_featurize_one, [(s, pre_dir, config.features) for s in subjects])
    sids, labels, widx, feats, funcs = [], [], [], [], []
    dropped = {}
    for sid, label, f, a, idx, n_drop in results:
        if n_drop:
            dropped[sid] = n_drop
        sids += [sid] * len(f)
        labels += [int(Label.parse(label))] * len(f)
        widx += idx
        feats += f
        funcs += a
    spatial = default_spatial_adjacency(config.features.spatial_proximity).values
    data = WindowDataset(
        subject_ids=np.array(sids, dtype=object),
        labels=np.array(labels, dtype=int),
        window_index=np.array(widx, dtype=int),
        features=np.array(feats).reshape(-1, 8, 6),
        functional=np.array(funcs).reshape(-1, 8, 8),
        spatial=np.array(spatial),
    )
    formats.write_feature_store(store_dir, data, digest, dropped)
    summary = _store_summary(data)
    summary["dropped_windows"] = int(sum(dropped.values()))
    return summary


def _store_summary(data: WindowDataset, skipped: bool = False) -> dict:
    totals = data.class_totals()
    return {"windows": {"patient": totals[1], "healthy": totals[0]},
            "subjects": len(data.index()), "skipped": skipped}


# ---------------------------------------------------------------------------
# train


def run_name(architecture: str, subsample: float) -> str:
    return architecture if subsample == 1 else f"{architecture}_sub{subsample:g}"


def build_plan(data: WindowDataset, config: ExperimentConfig) -> training.FoldPlan:
    labels = data.subject_labels()
    train_val, test = training.split_test(labels, config.split.test_fraction, config.seed)
    return training.make_folds(train_val, labels, config.split.k, config.seed, test)


def _train_one(args):
    data, plan, fold, arch, config = args
    return training.train_fold(data, plan, fold, arch, config.train, config.seed,
                               config.digest("experiment"))


def cmd_train(store_dir: str | Path, runs_dir: str | Path, config: ExperimentConfig,
              architecture: str | None = None, subsample: float = 1.0) -> dict:
    """Split, fold and train one model per fold; write checkpoints and summaries."""
    arch = Architecture(architecture or config.architecture)
    data = formats.read_feature_store(store_dir, config.digest("features"))
    plan = build_plan(data, config)
    if subsample != 1:
        plan = training.subsample_training(plan, subsample, config.seed)
    name = run_name(arch.value, subsample)
    out = Path(runs_dir) / name
    exp_digest = config.digest("experiment")
    runs = _map(_train_one, [(data, plan, f, arch, config) for f in range(plan.k)])
    fold_summaries = []
    for run in runs:
        meta = {
            "config_digest": exp_digest,
            "run_digest": config.run_digest(arch.value, subsample),
            "feature_digest": config.digest("features"),
            "fold": run.fold_index,
            "best_epoch": run.best_epoch,
            "best_val_auc": run.best_val_auc,
            "subsample": subsample,
        }
        formats.write_checkpoint(out / f"fold_{run.fold_index:02d}.ckpt", run.params, meta)
        s = run.summary()
        s["run_digest"] = meta["run_digest"]
        s["subsample"] = subsample
        _write_json(out / f"fold_{run.fold_index:02d}.json", s)
        fold_summaries.append({"fold": run.fold_index, "best_val_auc": run.best_val_auc,
                               "best_epoch": run.best_epoch})
    _write_json(out / PLAN_FILE, {**plan.to_dict(), "config_digest": exp_digest,
                                  "subsample": subsample, "architecture": arch.value})
    summary = {"run": name, "architecture": arch.value, "config_digest": exp_digest,
               "folds": fold_summaries}
    _write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# evaluate


def _load_run(run_dir: Path, exp_digest: str):
    plan_path = run_dir / PLAN_FILE
    if not plan_path.is_file():
        raise MissingCheckpoint(f"no {PLAN_FILE} in {run_dir}")
    plan = json.loads(plan_path.read_text())
    if plan["config_digest"] != exp_digest:
        raise DigestMismatch(f"{run_dir} was trained with a different config")
    models = []
    for f in range(len(plan["folds"])):
        params, header = formats.read_checkpoint(run_dir / f"fold_{f:02d}.ckpt")
        if header["config_digest"] != exp_digest:
            raise DigestMismatch(f"{run_dir}/fold_{f:02d}.ckpt has a different config digest")
        models.append(params)
    return plan, models


def _write_roc(path: Path, curve: evaluation.RocCurve) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in curve.points:
            w.writerow([repr(fpr), repr(tpr), repr(thr)])


def _write_embeddings(path: Path, rows: list[evaluation.SubjectEmbedding]) -> None:
    width = rows[0].vector.size if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "label"] + [f"e{i}" for i in range(width)])
        for r in rows:
            w.writerow([r.subject_id, Label(r.label).text] + [repr(float(v)) for v in r.vector])


def _row(report: evaluation.MetricsReport) -> dict:
    row = report.as_dict()
    std = report.std
    row["table"] = {
        m: evaluation.format_mean_std(getattr(report, m), None if std is None else std[m])
        for m in evaluation.MetricsReport.METRICS
    }
    return row


def export_embeddings(params, data: WindowDataset) -> list[evaluation.SubjectEmbedding]:
    """Per-subject mean of the pooled window embeddings."""
    _, emb = training.predict(params, data, with_embedding=True)
    return evaluation.average_embeddings(data.subject_ids, data.labels, emb)


def cmd_evaluate(store_dir: str | Path, runs_dir: str | Path, out_dir: str | Path,
                 config: ExperimentConfig, models: list[str] | None = None) -> dict:
    """Held-out evaluation of every trained run plus trivial baselines and KS tests.

    The operating threshold of each model is the Youden point of its pooled
    out-of-fold validation scores; it is applied unchanged to every fold
    model on the test subjects.
    """
    runs_dir, out_dir = Path(runs_dir), Path(out_dir)
    exp_digest = config.digest("experiment")
    data = formats.read_feature_store(store_dir, config.digest("features"))
    labels = data.subject_labels()
    if models is None:
        models = sorted(p.name for p in runs_dir.iterdir() if (p / PLAN_FILE).is_file())
    if not models:
        raise MissingCheckpoint(f"no trained runs under {runs_dir}")

    rows: dict[str, dict] = {}
    fold_avg_scores: dict[str, dict[str, float]] = {}
    test_subjects = None
    for name in models:
        plan, params_list = _load_run(runs_dir / name, exp_digest)
        if test_subjects is None:
            test_subjects = plan["test_subjects"]
        elif plan["test_subjects"] != test_subjects:
            raise DigestMismatch(f"run {name} uses a different test split")
        test = data.subset(data.rows_for(test_subjects))
        val_scores: dict[str, float] = {}
        test_scores = []
        for params, fold in zip(params_list, plan["folds"]):
            val = data.subset(data.rows_for(fold["val"]))
            val_scores.update(training.subject_scores(val.subject_ids, training.predict(params, val)))
            test_scores.append(training.subject_scores(test.subject_ids, training.predict(params, test)))
        vs = sorted(val_scores)
        threshold, _ = evaluation.youden_threshold(
            evaluation.roc_curve([val_scores[s] for s in vs], [labels[s] for s in vs]))
        fold_reports = []
        for f, scores in enumerate(test_scores):
            ts = sorted(scores)
            s_arr = [scores[s] for s in ts]
            l_arr = [labels[s] for s in ts]
            _write_roc(out_dir / f"roc_{name}_fold{f:02d}.csv", evaluation.roc_curve(s_arr, l_arr))
            fold_reports.append(evaluation.classification_metrics(
                scores=s_arr, labels=l_arr, threshold=threshold))
        summary = evaluation.summarize_reports(fold_reports)
        row = _row(summary)
        row["folds"] = [r.as_dict() for r in fold_reports]
        row["threshold_source"] = "youden on pooled out-of-fold validation scores"
        rows[name] = row
        fold_avg_scores[name] = evaluation.pooled_scores(test_scores)
        if params_list[0].architecture.is_graph:
            for f, params in enumerate(params_list):
                _write_embeddings(out_dir / f"embeddings_{name}_fold{f:02d}.csv",
                                  export_embeddings(params, test))

    test_labels = np.array([labels[s] for s in sorted(test_subjects)])
    train_val_labels = np.array([v for s, v in labels.items() if s not in set(test_subjects)])
    prevalence = float(train_val_labels.mean())
    trivial_1 = evaluation.trivial_classifier("imbalanced", test_labels, p=prevalence, sims=1000,
                                              seed=config.seed)
    trivial_2 = evaluation.trivial_classifier("majority_always", test_labels)
    rows["trivial_1"] = {**_row(trivial_1), "p": prevalence, "sims": 1000}
    rows["trivial_2"] = _row(trivial_2)

    ks = []
    for a, b in combinations(sorted(fold_avg_scores), 2):
        d, p = evaluation.ks_test(list(fold_avg_scores[a].values()), list(fold_avg_scores[b].values()))
        ks.append({"a": a, "b": b, "statistic": d, "p_value": p})

    report = {
        "format": METRICS_FORMAT,
        "version": 1,
        "config_digest": exp_digest,
        "n_test_subjects": len(test_subjects),
        "test_prevalence": float(test_labels.mean()),
        "rows": rows,
        "ks_tests": ks,
    }
    _write_json(out_dir / "metrics.json", report)
    return report
