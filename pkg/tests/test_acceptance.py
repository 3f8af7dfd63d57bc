"""Acceptance gate: one PASS/FAIL/SKIP line per criterion in the run summary.

Run alone with ``pytest tests/test_acceptance.py`` (about a minute; criterion 7
trains a model). Criterion 8 needs the public marinecadastre extract; point
``AISFISH_REFERENCE_DATA`` at the CSV file(s), separated by ``os.pathsep``.
"""
import importlib.util
import itertools
import os
from pathlib import Path

import numpy as np
import pytest

from aisfish.checkpoint import Checkpoint, NormStats
from aisfish.evaluation import ConfusionMatrix, evaluate, metrics
from aisfish.features import WindowSpec, rcog
from aisfish.labeling import davies_bouldin, fit_kmeans, label_dataset, relabel_runs, standardize
from aisfish.model import ModelConfig, count_params, init
from aisfish.stream import Detector, batch_detect, replay
from aisfish.synthetic import synthetic_trajectory
from aisfish.train import SplitSpec, TrainConfig, fit, make_windows, split
from oracles import best_two_partition_sse, count_confusion, model_gradcheck, per_class_scores, runs

ROOT = Path(__file__).resolve().parents[1]
acceptance = pytest.mark.acceptance


@acceptance(1, "parameter counts match the reference tables exactly")
def test_c1_parameter_counts(measured):
    elman = [5704, 21640, 84232, 5864, 21960, 84872, 6024, 22280, 85512]
    got = [count_params(ModelConfig("elman", w, s)).total for w in (5, 10, 15) for s in (32, 64, 128)]
    gated = [count_params(ModelConfig(c, 10, 64)).total for c in ("gru", "lstm")]
    measured(f"elman={got}, gru/lstm={gated}")
    assert got == elman and gated == [64200, 85320]


@acceptance(2, "analytic gradients match central differences, max rel err < 1e-4, 5 seeds per cell")
@pytest.mark.parametrize("cell", ["elman", "gru", "lstm"])
def test_c2_gradients(cell, measured):
    worst = max(model_gradcheck(cell, seed, w=4, s=3, batch=2) for seed in range(5))
    measured(f"{cell} max rel err {worst:.1e}")
    assert worst < 1e-4


@acceptance(3, "k-means from all point-pair seeds hits the brute-force optimum; DBI example = 0.1")
def test_c3_kmeans_oracle(measured):
    rng = np.random.default_rng(2024)
    instances = 0
    for n in range(2, 9):
        for _ in range(40):
            X = rng.normal(size=(n, 2)) * rng.uniform(0.1, 10, 2)
            Z, _, _ = standardize(X)
            best = min(fit_kmeans(X, 2, init=X[[i, j]]).sse for i, j in itertools.combinations(range(n), 2))
            assert abs(best - best_two_partition_sse(Z)) <= 1e-9, (n, X)
            instances += 1
    measured(f"{instances} instances")


@acceptance(3, "k-means from all point-pair seeds hits the brute-force optimum; DBI example = 0.1")
def test_c3_dbi_example(measured):
    X = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
    dbi = davies_bouldin(X, [0, 0, 1, 1], [[0.5, 0.0], [10.5, 0.0]])
    measured(f"DBI={dbi:.12f}")
    assert abs(dbi - 0.1) <= 1e-9


@acceptance(4, "RCOG laws over 10,000 random COG pairs and the worked examples")
def test_c4_rcog(measured):
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0, 360, 10_000), rng.uniform(0, 360, 10_000)
    a[:50], b[:50] = 0.0, 180.0  # exercise the +-180 boundary
    d = b - a
    r = rcog(d)
    assert np.all((r > -180) & (r <= 180))
    k = (r - d) / 360
    assert np.all(np.abs(k - np.round(k)) < 1e-12)
    off = np.abs(np.abs(d) - 180) > 0
    assert np.array_equal(rcog(-d[off]), -r[off])
    assert (rcog(270), rcog(-340), rcog(45)) == (-90, 20, 45)
    measured(f"{len(d)} pairs, {int((~off).sum())} on the boundary")


@acceptance(5, "run post-processing reaches a fixpoint over 10,000 random sequences")
def test_c5_relabel(measured):
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        n = int(rng.integers(1, 201))
        # mix of noisy and run-structured sequences
        if rng.random() < 0.5:
            seq = rng.integers(0, 2, n)
        else:
            seq = np.repeat(rng.integers(0, 2, n), rng.integers(1, 9, n))[:n]
        out = relabel_runs(seq, 5)
        r = runs(out)
        assert len(out) == n
        assert len(r) == 1 or min(r) >= 5
        assert np.array_equal(relabel_runs(out, 5), out)
    measured("10000 sequences")


@acceptance(6, "online detections are bitwise equal to stride-1 batch inference on 100 trajectories")
def test_c6_stream_equals_batch(measured):
    rng = np.random.default_rng(6)
    trajs = [synthetic_trajectory(300_000_000 + i, rng, n_segments=3)[0] for i in range(100)]
    cfg = ModelConfig("elman", 10, 64, seed=6)
    norm = NormStats((48.5, -124.0, 180.0, 8.0), (0.5, 0.5, 100.0, 4.0),
                     (47.8, -125.0, 0.0, 0.6), (49.0, -123.0, 360.0, 15.0))
    ckpt = Checkpoint(cfg, init(cfg), norm)
    det = Detector(ckpt)
    feed = list(replay(trajs))
    streamed, i = [], 0
    while i < len(feed):  # ragged micro-batches mix vessels at different positions
        step = int(rng.integers(1, 200))
        streamed.extend(det.process(feed[i : i + step]))
        i += step
    by_vessel = {}
    for d in streamed:
        by_vessel.setdefault(d.mmsi, []).append(d)
    n = 0
    for t in trajs:
        expected = batch_detect(ckpt, t)
        assert by_vessel.get(t.mmsi, []) == expected
        n += len(expected)
    measured(f"{n} detections compared")


@acceptance(7, "synthetic end-to-end: Elman w=10 s=32 reaches macro F1 >= 0.95 within 50 epochs")
def test_c7_synthetic_learning(measured):
    rng = np.random.default_rng(1)
    fleet, regimes = {}, {}
    for mmsi in range(367_000_000, 367_000_080):
        fleet[mmsi], regimes[mmsi] = synthetic_trajectory(mmsi, rng)
    tracks, _ = label_dataset(fleet.values(), WindowSpec("message", 10), k=8, seed=0)
    parts = split(tracks, SplitSpec(n_test=15, n_val=8, seed=0))
    win = {k: make_windows(v, 10) for k, v in parts.items()}
    result = fit(TrainConfig(max_epochs=50, seed=0), ModelConfig("elman", 10, 32, dropout_rate=0.0),
                 win["train"], win["val"])
    report, _ = evaluate(result.checkpoint, win["test"])
    agree = np.mean(np.concatenate([t.labels == regimes[t.mmsi][1:] for t in tracks]))
    measured(f"macro F1 {report.macro.f1:.4f} at epoch {result.best_epoch}; label/regime agreement {agree:.3f}")
    assert len(result.history) <= 50
    assert report.macro.f1 >= 0.95


def _reference_inputs():
    raw = os.environ.get("AISFISH_REFERENCE_DATA", "")
    return [p for p in raw.split(os.pathsep) if p]


@acceptance(8, "reference-scale: macro F1 within 5 points of 87.45%, hard-ensemble TN rate >= 0.94")
@pytest.mark.skipif(not _reference_inputs(),
                    reason="marinecadastre Strait of Juan de Fuca Apr-Jun 2020 extract not available "
                           "(set AISFISH_REFERENCE_DATA; no network route to marinecadastre.gov here)")
def test_c8_reference_scale(tmp_path, measured):
    spec = importlib.util.spec_from_file_location("reproduce_reference", ROOT / "scripts" / "reproduce_reference.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    res = mod.reproduce(_reference_inputs(), tmp_path, use_prefilter=os.environ.get("AISFISH_PREFILTER") == "1")
    measured(f"macro F1 {res['elman_O']['macro_f1']:.4f}, TN rate {res['ensemble_hard']['rates']['tn']:.4f}")
    assert res["checks"]["macro_f1_band"] and res["checks"]["ensemble_tn_rate"]


@acceptance(9, "metrics equal a brute-force per-sample counter on 1,000 random vectors")
def test_c9_metrics(measured):
    rng = np.random.default_rng(9)
    for _ in range(1000):
        n = int(rng.integers(1, 300))
        y, p = rng.integers(0, 2, n), rng.integers(0, 2, n)
        if rng.random() < 0.1:  # include single-class vectors for the zero-denominator paths
            p = np.zeros(n, dtype=int)
        cm = ConfusionMatrix.from_predictions(y, p)
        assert cm.__dict__ == count_confusion(y.tolist(), p.tolist())
        m = metrics(cm)
        for name, positive in (("fishing", 1), ("sailing", 0)):
            got = m[name]
            assert (got.precision, got.recall, got.f1) == per_class_scores(y.tolist(), p.tolist(), positive)
            assert got.support == int(np.sum(y == positive))
    measured("1000 vectors")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
