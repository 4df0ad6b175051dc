"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

import gradcheck
import oracles
from conftest import make_dataset, record_criterion
from eeg_gcnn import cli
from eeg_gcnn.config import ExperimentConfig, TrainConfig
from eeg_gcnn.evaluation import aggregate_subject, roc_auc, roc_curve, trivial_classifier, youden_threshold
from eeg_gcnn.graph_builder import (
    ElectrodePosition,
    combine_adjacency,
    default_spatial_adjacency,
    functional_adjacency,
    geodesic_distance,
)
from eeg_gcnn.neural import Activation, Architecture, GcnLayer, Mode, gcn_forward, normalize_adjacency
from eeg_gcnn.signal_core import notch_filter
from eeg_gcnn.spectral import BAND_NAMES, extract_features, spectral_coherence, welch_psd
from eeg_gcnn.training import make_folds, split_test, train_fold

FS = 250.0


def test_gradient_correctness():
    start = time.perf_counter()
    errors = {}
    for arch in Architecture:
        for mode in (Mode.TRAIN, Mode.EVAL):
            errors[f"{arch.value}/{mode.name.lower()}"] = gradcheck.check_architecture(arch, seed=0, mode=mode)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 60
    record_criterion("gradient correctness", ok, f"max rel err {worst:.1e} (< 1e-4), {elapsed:.1f} s (< 60 s)")
    assert ok, errors


def test_propagation_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst_norm = worst_fwd = 0.0
    for _ in range(200):
        a = rng.uniform(0, 1, (8, 8))
        a = (a + a.T) / 2
        np.fill_diagonal(a, 0.0)
        norm = normalize_adjacency(a)
        worst_norm = max(worst_norm, np.abs(norm - oracles.dense_normalize(a)).max())
        h = rng.standard_normal((8, 6))
        w = rng.standard_normal((6, int(rng.integers(1, 65))))
        act = Activation.RELU if rng.random() < 0.5 else Activation.IDENTITY
        ref = oracles.triple_loop_matmul(oracles.triple_loop_matmul(oracles.dense_normalize(a), h), w)
        if act is Activation.RELU:
            ref = np.maximum(ref, 0.0)
        worst_fwd = max(worst_fwd, np.abs(gcn_forward(h, GcnLayer(w, act), norm) - ref).max())
    ok = worst_norm <= 1e-10 and worst_fwd <= 1e-10
    record_criterion("propagation oracle", ok,
                     f"200 instances, normalize err {worst_norm:.1e}, forward err {worst_fwd:.1e} (<= 1e-10)")
    assert ok


def test_connectivity_invariants():
    rng = np.random.default_rng(7)
    spatial = default_spatial_adjacency()
    worst_sym = worst_arith = 0.0
    in_range = True
    for _ in range(500):
        common = rng.standard_normal(2500)
        mix = rng.uniform(0, 1, (8, 1))
        x = mix * common + rng.standard_normal((8, 2500)) * rng.uniform(0.1, 3.0, (8, 1))
        functional = functional_adjacency(x)
        combined = combine_adjacency(spatial, functional).values
        worst_sym = max(worst_sym, np.abs(combined - combined.T).max())
        in_range &= bool(combined.min() >= 0.0 and combined.max() <= 1.0)
        worst_arith = max(worst_arith, np.abs(combined - (spatial.values + functional.values) / 2).max())
    north, south = ElectrodePosition("n", 0, 0, 1), ElectrodePosition("s", 0, 0, -1)
    east = ElectrodePosition("e", 1, 0, 0)
    exact = (geodesic_distance(north, north) == 0.0 and geodesic_distance(north, east) == np.pi / 2
             and geodesic_distance(north, south) == np.pi)
    ok = worst_sym == 0.0 and in_range and worst_arith <= 1e-12 and exact
    record_criterion("connectivity invariants", ok,
                     f"500 windows, asym {worst_sym:.1e}, in [0,1] {in_range}, "
                     f"arith err {worst_arith:.1e} (<= 1e-12), geodesic 0/pi/2/pi exact {exact}")
    assert ok


def test_dsp_oracles():
    t = np.arange(2500) / FS
    sine = np.sin(2 * np.pi * 10 * t)
    bands = extract_features(np.tile(sine, (8, 1)))[0]
    alpha_frac = bands[BAND_NAMES.index("alpha")] / bands.sum()
    oracle_alpha = oracles.periodogram_band_fraction(sine, FS, 7.5, 13.0)

    tl = np.arange(60 * 250) / FS
    mid = slice(10 * 250, 50 * 250)
    mains = np.sin(2 * np.pi * 50 * tl)
    notch_db = 20 * np.log10(oracles.sine_fit_amplitude(notch_filter(mains, FS)[mid], 50.0, FS))

    x = np.random.default_rng(11).standard_normal(2500)
    self_coh = spectral_coherence(x, x)
    oracle_coh = oracles.coherence_oracle(x, x)

    worst_parseval = 0.0
    for seed in range(20):
        w = np.random.default_rng(seed).standard_normal(2500)
        est = welch_psd(w)
        f, p = oracles.periodogram(w, FS)
        ratio = est.power.sum() * (est.freqs_hz[1] - est.freqs_hz[0]) / (p.sum() * (f[1] - f[0]))
        worst_parseval = max(worst_parseval, abs(ratio - 1))

    ok = (alpha_frac >= 0.99 and oracle_alpha >= 0.99 and notch_db <= -20
          and abs(self_coh - 1) <= 1e-9 and abs(oracle_coh - 1) <= 1e-9 and worst_parseval <= 0.10)
    record_criterion("DSP oracles", ok,
                     f"alpha share {alpha_frac:.4f} (oracle {oracle_alpha:.4f}), notch {notch_db:.1f} dB, "
                     f"coh(x,x)-1 {self_coh - 1:.1e}, Parseval dev {worst_parseval:.3f}")
    assert ok


def test_subject_mle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, 2, n) if rng.random() < 0.5 else rng.random(n)
        worst = max(worst, abs(aggregate_subject(y) - oracles.bernoulli_grid_mle(y)))
    ok = worst <= 1e-4
    record_criterion("subject MLE", ok, f"100 subjects, max |pi_hat - grid argmax| {worst:.1e} (grid step 1e-4)")
    assert ok


def test_trivial_classifiers():
    labels = np.array([1] * 421 + [0] * 57)
    maj = trivial_classifier("majority_always", labels)
    imb = trivial_classifier("imbalanced", labels, p=0.86, sims=1000, seed=0)
    ok = (abs(maj.precision - 0.88) <= 0.01 and maj.recall == 1.0 and abs(maj.f1 - 0.94) <= 0.01
          and maj.balanced_accuracy == 0.5 and abs(imb.auc - 0.5) <= 0.05
          and abs(imb.balanced_accuracy - 0.5) <= 0.05)
    record_criterion("trivial classifiers", ok,
                     f"majority P {maj.precision:.3f} R {maj.recall:.2f} F1 {maj.f1:.3f} "
                     f"BA {maj.balanced_accuracy}; imbalanced AUC {imb.auc:.3f} BA {imb.balanced_accuracy:.3f}")
    assert ok


def test_auc_and_youden():
    rng = np.random.default_rng(9)
    worst = 0.0
    youden_ok = True
    for i in range(200):
        n = int(rng.integers(4, 60))
        levels = int(rng.integers(2, 12)) if i % 2 == 0 else 10**6
        scores = rng.integers(0, levels, n) / levels
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        worst = max(worst, abs(roc_auc(scores, labels) - oracles.pair_counting_auc(scores, labels)))
        t, j = youden_threshold(roc_curve(scores, labels))
        youden_ok &= (t == oracles.enumerate_youden_threshold(scores, labels)
                      and abs(j - oracles.enumerate_youden(scores, labels)) <= 1e-12)
    ok = worst <= 1e-9 and youden_ok
    record_criterion("AUC and Youden", ok,
                     f"200 instances with ties, max AUC err {worst:.1e} (<= 1e-9), Youden matches {youden_ok}")
    assert ok


def test_leakage_guard():
    data = make_dataset(n_per_class=30, windows=3)
    labels = data.subject_labels()
    train_val, test = split_test(labels, 0.3, seed=0)
    plan = make_folds(train_val, labels, k=10, seed=0, test_subjects=test)
    overlaps = []
    for f in range(plan.k):
        run = train_fold(data, plan, f, "shallow", TrainConfig(max_epochs=2, batch_size=32), seed=0)
        _, val = plan.folds[f]
        overlaps.append(len(run.gradient_subjects & (set(val) | set(test))))
    ok = plan.k == 10 and sum(overlaps) == 0
    record_criterion("leakage guard", ok, f"{plan.k} folds, gradient/held-out overlaps {overlaps}")
    assert ok


# --- end to end -------------------------------------------------------------


def run_pipeline(root: Path, cfg: ExperimentConfig, archs=("shallow", "fcnn")) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    cfg.save(root / "config.json")
    c = ["--config", str(root / "config.json")]
    steps = [
        ["synth", *c, "--out", str(root / "synth")],
        ["preprocess", *c, "--manifest", str(root / "synth/manifest.json"), "--out", str(root / "pre")],
        ["featurize", *c, "--preprocessed", str(root / "pre"), "--out", str(root / "store")],
        *[["train", *c, "--store", str(root / "store"), "--out", str(root / "runs"), "--arch", a] for a in archs],
        ["evaluate", *c, "--store", str(root / "store"), "--runs", str(root / "runs"), "--out", str(root / "eval")],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv
    return json.loads((root / "eval/metrics.json").read_text())


@pytest.mark.slow
def test_end_to_end_separable(tmp_path):
    cfg = ExperimentConfig(seed=0)
    start = time.perf_counter()
    report = run_pipeline(tmp_path / "sep", cfg)
    minutes = (time.perf_counter() - start) / 60
    shallow, fcnn = report["rows"]["shallow"]["auc"], report["rows"]["fcnn"]["auc"]
    ok = shallow >= 0.95 and shallow > fcnn and minutes < 15
    record_criterion("end-to-end separable", ok,
                     f"shallow AUC {shallow:.3f} (>= 0.95), fcnn AUC {fcnn:.3f} (< shallow), "
                     f"{minutes:.1f} min (< 15)")
    assert ok


@pytest.mark.slow
def test_end_to_end_null(tmp_path):
    aucs = []
    for seed in range(5):
        cfg = ExperimentConfig(seed=seed)
        cfg.synth.alpha_separation = 0.0
        cfg.synth.coupling_separation = 0.0
        report = run_pipeline(tmp_path / f"null{seed}", cfg, archs=("shallow",))
        aucs.append(report["rows"]["shallow"]["auc"])
    mean = float(np.mean(aucs))
    ok = abs(mean - 0.5) <= 0.07
    record_criterion("end-to-end null", ok,
                     f"mean shallow AUC {mean:.3f} over seeds 0-4 (0.5 +/- 0.07), per seed "
                     + ", ".join(f"{a:.3f}" for a in aucs))
    assert ok


def test_determinism(tmp_path):
    cfg = ExperimentConfig(seed=4)
    cfg.synth.n_per_class = 14
    cfg.synth.duration_s = 30.0
    cfg.split.k = 4
    cfg.train.max_epochs = 4
    cfg.train.batch_size = 32
    run_pipeline(tmp_path / "a", cfg)
    run_pipeline(tmp_path / "b", cfg)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differing = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    stages = {f.parts[0] for f in files}
    ok = not differing and {"synth", "pre", "store", "runs", "eval"} <= stages
    record_criterion("determinism", ok,
                     f"{len(files)} artifacts over {len(stages)} stages, {len(differing)} differ")
    assert ok, differing
