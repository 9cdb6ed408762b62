"""End-to-end acceptance criteria, one test per criterion.

Test names start with ``test_cNN_`` so the terminal summary in conftest can
print a PASS/FAIL line for each.
"""
import json
import math
import os
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cran_highlight import cli, evaluation, highlight, nn, pipeline
from cran_highlight.audio import SAMPLE_RATE, SampleBuffer, load_track, mel_spectrogram, write_wav
from cran_highlight.model import CRAN, ModelConfig, loss
from cran_highlight.nn import Tensor
from cran_highlight.training import TrainConfig, evaluate_examples, train


def note(criterion, text):
    print(f"[{criterion}] {text}")


def tiny(variant="CRAN", **kw):
    return CRAN(ModelConfig.tiny(variant=variant, **kw))


# -- 1 ---------------------------------------------------------------------------

def test_c01_gradient_correctness():
    t0 = time.time()
    m = tiny(dropout_recurrent=0.0, dropout_fc=0.0, seed=1)
    x = np.random.default_rng(0).random((128, 4000))
    target = np.array([0.0, 1.0, 0.0])
    # eps 1e-5: at 1e-4 the central difference straddles pooling/activation kinks
    err = nn.finite_difference_check(lambda: loss(m.forward(x), target), m.parameters(),
                                     epsilon=1e-5, max_coords=40)
    elapsed = time.time() - t0
    note("C1", f"max relative error {err:.3e} over {len(m.parameters())} tensors in {elapsed:.1f} s")
    assert err < 1e-4
    assert elapsed < 60


# -- 2 ---------------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["CRAN", "CAN"])
def test_c02_attention_normalization(variant):
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(100):
        m = tiny(variant, seed=i)
        scale = 10.0 ** rng.uniform(-3, 2)
        alpha = m.forward(rng.random((128, 4000)) * scale).attention
        worst = max(worst, abs(alpha.sum() - 1.0))
        assert alpha.shape == (16,) and np.all(alpha >= 0)
    note("C2", f"{variant}: worst |sum(alpha) - 1| = {worst:.2e}")
    assert worst <= 1e-9


# -- 3 ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=1.0, max_value=400.0, allow_nan=False))
def test_c03_shape_contract(duration):
    n = int(math.ceil(duration * SAMPLE_RATE))
    x = np.sin(np.arange(n) * 0.05)
    mel = mel_spectrogram(SampleBuffer(x, SAMPLE_RATE))
    assert mel.shape == (128, 4000)


@pytest.mark.parametrize("duration", [1.0, 120.0, 244.68, 244.69, 400.0])
def test_c03_shape_contract_branches(duration, tmp_path):
    # both sides of the 2,048,512-sample canonical length, read through a resampling WAV path
    rate = 22050
    n = int(round(duration * rate))
    path = str(tmp_path / "a.wav")
    write_wav(path, SampleBuffer(0.3 * np.sin(np.arange(n) * 0.01), rate))
    mel = mel_spectrogram(load_track(path))
    note("C3", f"{duration} s -> {mel.shape}")
    assert mel.shape == (128, 4000)


# -- 4 ---------------------------------------------------------------------------

def brute_highlight_scores(e_tilde, e_mean, S, beta):
    out = np.empty(len(e_tilde) - S + 1)
    for n in range(len(out)):
        window = math.fsum(e_tilde[n:n + S])
        diff = 0.0
        if n >= 2:
            d1 = e_mean[n] - e_mean[n - 1]
            diff = d1 + (d1 - (e_mean[n - 1] - e_mean[n - 2]))
        out[n] = beta * window + (1.0 - beta) * diff
    return out


def test_c04_score_oracle_equivalence():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        mel = rng.random((128, 4000)) ** rng.uniform(0.5, 4)
        alpha = rng.dirichlet(np.ones(250))
        e_mean = highlight.mean_energy(mel)
        e_tilde = highlight.fuse(mel, highlight.upsample_attention(alpha), rng.uniform(0, 1))
        fast = highlight.highlight_scores(e_tilde, e_mean, 490, 0.5)
        slow = brute_highlight_scores(list(e_tilde), list(e_mean), 490, 0.5)
        worst = max(worst, float(np.abs(fast - slow).max()))
    note("C4", f"worst |fast - brute| = {worst:.2e}")
    assert worst <= 1e-12


# -- 5 ---------------------------------------------------------------------------

def direct_overlap(a, b):
    (a0, a1), (b0, b1) = a, b
    if a1 <= b0 or b1 <= a0:
        return 0.0
    lo = a0 if a0 > b0 else b0
    hi = a1 if a1 < b1 else b1
    return hi - lo


def test_c05_metric_identities():
    rng = np.random.default_rng(5)
    boundary = 0
    for i in range(1000):
        if i % 4 == 0:
            # exact half overlap on an integer grid: must not count as recalled
            h0 = float(rng.integers(0, 200))
            d = float(2 * rng.integers(1, 40))
            h = (h0, h0 + d)
            if rng.random() < 0.5:
                gt = (h0 + d / 2, h0 + d / 2 + float(rng.integers(d // 2, 90)))
            else:
                gt = (h0 - float(rng.integers(0, 30)), h0 + d / 2)
        else:
            g0, h0 = rng.uniform(0, 300, 2)
            gt = (g0, g0 + rng.uniform(0.01, 60))
            h = (h0, h0 + rng.uniform(0.01, 90))
        o = direct_overlap(gt, h)
        assert evaluation.overlap(gt, h) == o
        assert evaluation.overlap(h, gt) == o
        expect = 1 if o > 0.5 * (h[1] - h[0]) else 0
        assert evaluation.recall_bit(gt, h) == expect
        if o == 0.5 * (h[1] - h[0]):
            boundary += 1
            assert evaluation.recall_bit(gt, h) == 0
    note("C5", f"1000 cases, {boundary} on the equality boundary")
    assert boundary >= 200


# -- 6 ---------------------------------------------------------------------------

def test_c06_overfit_sanity(corpus20):
    t0 = time.time()
    data = pipeline.build_examples(corpus20["manifest"].records, corpus20["cache"], 4)
    m = tiny(genres=4, seed=0)
    ck = train(m, data, config=TrainConfig(epochs=200, batch_size=4, seed=0, stop_loss=0.05))
    res = evaluate_examples(m, data, ks=(1,))
    elapsed = time.time() - t0
    note("C6", f"train loss {res['loss']:.4f}, Recall@1 {res['recall@1']:.3f} after "
               f"{ck.metadata['epochs_run']} epochs in {elapsed:.0f} s")
    assert ck.metadata["epochs_run"] <= 200
    assert res["loss"] < 0.05
    assert res["recall@1"] == 1.0
    assert elapsed < 600


# -- 7 ---------------------------------------------------------------------------

def test_c07_highlight_recovery(corpus50):
    manifest, cache, gt = corpus50["manifest"], corpus50["cache"], corpus50["ground_truth"]
    energy = pipeline.extract_records(manifest, "energy", cache)
    m = tiny(genres=4, seed=0)
    train(m, pipeline.build_examples(manifest.split("train"), cache, 4),
          pipeline.build_examples(manifest.split("val"), cache, 4), TrainConfig(epochs=20, batch_size=4, seed=0))
    fused = pipeline.extract_records(manifest, "model", cache, m, gamma=0.1)
    report = evaluation.build_report(manifest, gt, {"energy": pipeline.records_to_spans(energy)["energy"],
                                                    "cran": pipeline.records_to_spans(fused)["cran"]})
    r_energy = report["extractors"]["energy"]["overall"]["recall"]
    r_cran = report["extractors"]["cran"]["overall"]["recall"]
    note("C7", f"energy recall {r_energy:.3f}, gamma=0.1 recall {r_cran:.3f} over {len(manifest)} tracks")
    assert r_energy >= 0.9
    assert r_cran >= r_energy - 0.05


# -- 8 ---------------------------------------------------------------------------

def test_c08_ablation_ordering(corpus50):
    manifest, cache = corpus50["manifest"], corpus50["cache"]
    train_set = pipeline.build_examples(manifest.split("train"), cache, 4)
    val_set = pipeline.build_examples(manifest.split("val"), cache, 4)
    means = {}
    for variant in ("CRAN", "CNN"):
        scores = []
        for seed in range(3):
            m = tiny(variant, genres=4, seed=seed)
            train(m, train_set, val_set, TrainConfig(epochs=15, batch_size=4, seed=seed))
            scores.append(evaluate_examples(m, val_set, ks=(3,))["recall@3"])
        means[variant] = float(np.mean(scores))
        note("C8", f"{variant} val Recall@3 per seed {scores}, mean {means[variant]:.3f} (n={len(val_set)})")
    assert means["CRAN"] >= means["CNN"]


# -- 9 ---------------------------------------------------------------------------

def test_c09_permutation():
    rng = np.random.default_rng(9)
    cran, can = tiny("CRAN", seed=3), tiny("CAN", seed=3)
    worst = math.inf
    for _ in range(10):
        U = rng.standard_normal((16, 8))
        perm = rng.permutation(16)
        while np.array_equal(perm, np.arange(16)):
            perm = rng.permutation(16)
        delta = np.abs(cran.head(Tensor(U)).logits.data - cran.head(Tensor(U[perm])).logits.data).max()
        worst = min(worst, float(delta))
        np.testing.assert_array_equal(can.head(Tensor(U)).u_prime, can.head(Tensor(U[perm])).u_prime)
    note("C9", f"smallest CRAN max|delta logits| = {worst:.3e}; CAN u' bit-identical")
    assert worst > 1e-6


# -- 10 --------------------------------------------------------------------------

def full_pipeline(root):
    def run(*argv):
        assert cli.main([str(a) for a in argv]) == 0, argv

    corpus, cache = os.path.join(root, "corpus"), os.path.join(root, "cache")
    manifest = os.path.join(corpus, "manifest.csv")
    run("synth", "--n", 8, "--genres", 2, "--seed", 10, "--min-duration", 60, "--max-duration", 90, "--out", corpus)
    run("preprocess", manifest, "--cache-dir", cache, "--jobs", 2)
    ckpt = os.path.join(root, "cran.ckpt")
    run("train", manifest, "--cache-dir", cache, "--out", ckpt, "--tiny", "--epochs", 3, "--batch-size", 2,
        "--all-tracks", "--seed", 10)
    recs = []
    for ext in ("model", "energy", "f1m"):
        out = os.path.join(root, f"{ext}.jsonl")
        run("extract", manifest, "--cache-dir", cache, "--checkpoint", ckpt, "--extractor", ext, "--out", out)
        recs += ["--records", out]
    report = os.path.join(root, "report.json")
    run("eval", *recs, "--ground-truth", os.path.join(corpus, "ground_truth.csv"), "--manifest", manifest,
        "--manifest", os.path.join(corpus, "manifest_newrelease.csv"), "--checkpoint", ckpt, "--cache-dir", cache,
        "--out", report)
    with open(report, "rb") as fh, open(ckpt, "rb") as ck:
        return fh.read(), ck.read()


def test_c10_reproducibility(tmp_path, capsys):
    a_report, a_ckpt = full_pipeline(str(tmp_path / "a"))
    b_report, b_ckpt = full_pipeline(str(tmp_path / "b"))
    capsys.readouterr()
    report = json.loads(a_report)
    evaluation.validate_report(report)
    note("C10", f"reports {len(a_report)} bytes, identical={a_report == b_report}; "
                f"checkpoints identical={a_ckpt == b_ckpt}")
    assert a_report == b_report
    assert a_ckpt == b_ckpt
