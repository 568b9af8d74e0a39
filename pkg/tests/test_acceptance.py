"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end desk benchmark (criteria 9 and 12) trains the autoencoder for
500 epochs and takes several minutes on one CPU core.
"""

import time

import numpy as np
import pytest

from gradcheck import check_gradients
from oracles import ocsvm_dual_fista, ocsvm_kkt_residual, pca_by_covariance, principal_angles
from small_config import SMALL
from wavescope.cae.model import build_cae, count_params, layer_table, paper_preset
from wavescope.config import parse_config
from wavescope.detect import ThresholdRule, classify, compute_threshold, run_once
from wavescope.ocsvm import default_gamma, dual_objective, ocsvm_fit, predict, rbf_matrix, solve_dual
from wavescope.scalogram import WaveletParams, cwt, encode_records
from wavescope.subspace import fastica_fit, inverse, pca_fit, transform
from wavescope.wavegen import TimeSeriesRecord, build_dataset, make_toneburst

DESK = """\
[dataset]
preset = desk
noise_snr_db = 25

[representation]
size = 64
channels = 1

[cae]
preset = desk
epochs = 500

[run]
seed = 0
"""


@pytest.fixture(scope="module")
def desk_run():
    cfg = parse_config(DESK)
    t0 = time.perf_counter()
    reports = run_once(cfg, cfg.run.seed)
    return {r.method if r.method != "cae" else f"cae_{r.rule}": r for r in reports}, time.perf_counter() - t0


def test_01_parameter_counts(record):
    t0 = time.perf_counter()
    model = build_cae(paper_preset())
    enc_rows = [p for _, _, p in layer_table(model)[:model.code_index] if p]
    enc, dec, total = count_params(model)
    expansion = layer_table(model)[model.code_index][2]
    elapsed = time.perf_counter() - t0
    expected = [448, 64, 4640, 128, 18_496, 256, 73_856, 512, 295_168, 1024, 819_250, 153]
    ok = enc_rows == expected and enc == 1_213_995 and expansion == 65_536 and elapsed < 1.0
    record(1, ok, f"encoder {enc}, dense expansion {expansion}, decoder {dec}, total {total}, {elapsed:.2f}s")
    assert enc_rows == expected
    assert enc == 1_213_995 and expansion == 65_536
    assert elapsed < 1.0


def test_02_gradient_check(record):
    t0 = time.perf_counter()
    errors, kinds = check_gradients(seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 30
    record(2, ok, f"max relative error {errors[worst]:.2e} ({worst}) over {len(kinds)} layer kinds, {elapsed:.1f}s")
    assert errors[worst] < 1e-4
    assert {"conv2d", "conv2d_transpose", "batch_norm", "dense", "flatten", "reshape", "activation"} <= kinds
    assert elapsed < 30


def test_03_pca_oracle(record):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst_angle = worst_eig = 0.0
    for _ in range(50):
        X = rng.standard_normal((20, 8)) @ rng.standard_normal((8, 8))
        for m in range(1, 9):
            model = pca_fit(X, m)
            vals, vecs = pca_by_covariance(X, m)
            worst_angle = max(worst_angle, principal_angles(model.components.T, vecs).max())
            worst_eig = max(worst_eig, np.max(np.abs(model.eigenvalues - vals) / vals))
    elapsed = time.perf_counter() - t0
    ok = worst_angle < 1e-8 and worst_eig < 1e-8 and elapsed < 5
    record(3, ok, f"max principal angle {worst_angle:.1e} rad, max eigenvalue rel. error {worst_eig:.1e}, {elapsed:.2f}s")
    assert worst_angle < 1e-8 and worst_eig < 1e-8 and elapsed < 5


def test_04_pca_distortion_identity(record):
    rng = np.random.default_rng(4)
    worst = 0.0
    for n, d in [(30, 6), (12, 20), (100, 10)]:
        X = rng.standard_normal((n, d)) @ rng.standard_normal((d, d)) + rng.standard_normal(d)
        full = pca_fit(X, min(n - 1, d))
        for m in range(1, min(n - 1, d) + 1):
            model = pca_fit(X, m)
            mse = np.mean((inverse(model, transform(model, X)) - X) ** 2)
            predicted = full.eigenvalues[m:].sum() * (n - 1) / (n * d)
            worst = max(worst, abs(mse - predicted))
    ok = worst < 1e-8
    record(4, ok, f"max |MSE - discarded eigenvalue sum * (n-1)/(n d)| = {worst:.1e}")
    assert ok


def _match(S, S_hat):
    C = np.abs(np.corrcoef(S.T, S_hat.T)[:3, 3:])
    best = 0.0
    from itertools import permutations
    for perm in permutations(range(3)):
        best = max(best, min(C[i, perm[i]] for i in range(3)))
    return best


def test_05_fastica_recovery(record):
    t0 = time.perf_counter()
    scores = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        S = rng.laplace(size=(5000, 3))
        A = rng.standard_normal((3, 3))
        model = fastica_fit(S @ A.T, 3, tol=1e-4, max_iter=500, seed=seed)
        scores.append(_match(S, transform(model, S @ A.T)) if model.converged else 0.0)
    elapsed = time.perf_counter() - t0
    wins = sum(s > 0.99 for s in scores)
    ok = wins >= 9 and elapsed < 20
    record(5, ok, f"{wins}/10 seeds recover all sources (worst |corr| {min(scores):.4f}), {elapsed:.1f}s")
    assert ok


def test_06_ocsvm_dual_oracle(record):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst_obj = worst_kkt = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 21))
        X = rng.standard_normal((n, 2))
        nu = float(rng.uniform(0.1, 0.9))
        K = rbf_matrix(X, X, default_gamma(X))
        sol = solve_dual(K, nu, tol=1e-9)
        _, ref = ocsvm_dual_fista(K, nu)
        worst_obj = max(worst_obj, abs(dual_objective(K, sol.alpha) - ref))
        worst_kkt = max(worst_kkt, ocsvm_kkt_residual(K, sol.alpha, nu))
    elapsed = time.perf_counter() - t0
    ok = worst_obj < 1e-6 and worst_kkt < 1e-6 and elapsed < 30
    record(6, ok, f"max objective gap {worst_obj:.1e}, max KKT residual {worst_kkt:.1e}, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def baseline_features():
    cfg = parse_config("[dataset]\nn_train = 500\nn_test_baseline = 0\nn_test_damaged = 0\n")
    ds = build_dataset(cfg.generation_config(), 7)
    images, _ = encode_records(ds.train_baseline, WaveletParams.default(ds.sample_rate, 32), 32, 32)
    flat = images.reshape(len(images), -1)
    return transform(pca_fit(flat, 3), flat)


def test_07_nu_property(record, baseline_features):
    X = baseline_features
    n = len(X)
    rows = []
    ok = True
    for nu in np.round(np.arange(0.1, 1.0, 0.1), 1):
        model = ocsvm_fit(X, nu)
        outliers = float(np.mean(predict(model, X)))
        svs = model.alphas.size / n
        ok &= outliers <= nu + 2 / n and svs >= nu - 2 / n
        rows.append(f"{nu:.1f}:{outliers:.3f}/{svs:.3f}")
    record(7, ok, f"nu:outlier/SV fractions on {n} baseline points  " + " ".join(rows))
    assert ok


@pytest.mark.parametrize("cycles,freq,fs", [(5, 40e3, 10e6), (4.5, 60e3, 2e6)])
def test_08_cwt_localization(record, cycles, freq, fs):
    duration = 2e-3
    rec = make_toneburst(cycles, freq, 1.0, fs, duration)
    nz = np.flatnonzero(rec.samples)
    centre = (nz[0] + nz[-1]) / 2 / fs
    wp = WaveletParams.default(fs, 64)
    mag = cwt(rec, wp).magnitude()
    i, j = np.unravel_index(np.argmax(mag), mag.shape)
    f_est = wp.peak_frequencies(fs)[i]
    f_err = abs(f_est - freq) / freq
    t_err = abs(j / fs - centre) / centre
    rng = np.random.default_rng(8)
    y = rng.standard_normal(rec.samples.size)
    lhs = cwt(TimeSeriesRecord(3 * rec.samples - 2 * y, fs), wp).values
    rhs = 3 * cwt(rec, wp).values - 2 * cwt(TimeSeriesRecord(y, fs), wp).values
    lin = np.abs(lhs - rhs).max() / np.abs(rhs).max()
    ok = f_err < 0.05 and t_err < 0.05 and lin < 1e-10
    record(8, ok, f"{cycles}-cycle {freq / 1e3:g} kHz: frequency error {f_err:.2%}, time error {t_err:.2%}, linearity {lin:.1e}")
    assert ok


def test_09_desk_benchmark(record, desk_run):
    reports, elapsed = desk_run
    cae = reports["cae_q0.99"].accuracy
    pca = reports["pca_ocsvm"].extras["best_accuracy"]
    ica = reports["ica_ocsvm"].extras["best_accuracy"]
    ok = cae >= 0.95 and pca >= 0.85 and ica >= 0.85 and cae >= pca and cae >= ica and elapsed < 900
    record(9, ok, f"CAE q99 {cae:.3f} (max rule {reports['cae_max'].accuracy:.3f}), "
                  f"PCA-ocSVM best {pca:.3f} at nu={reports['pca_ocsvm'].extras['best_nu']}, "
                  f"ICA-ocSVM best {ica:.3f} at nu={reports['ica_ocsvm'].extras['best_nu']}, {elapsed:.0f}s")
    assert cae >= 0.95
    assert pca >= 0.85 and ica >= 0.85
    assert cae >= pca and cae >= ica
    assert elapsed < 900


def test_10_threshold_semantics(record):
    rng = np.random.default_rng(10)
    train = rng.gamma(2.0, 1e-5, 200)
    t_max = compute_threshold(train, ThresholdRule.parse("max"))
    zero_fp = int(classify(train, t_max).sum()) == 0
    test = rng.gamma(2.0, 1.5e-5, 500)
    grid = np.sort(np.r_[test, np.linspace(0, test.max() * 1.1, 50)])
    counts = [int(classify(test, t).sum()) for t in grid]
    monotone = all(a >= b for a, b in zip(counts, counts[1:]))
    q = compute_threshold(np.arange(1, 101), ThresholdRule.parse("q0.99"))
    ok = zero_fp and monotone and abs(q - 99.01) < 1e-12
    record(10, ok, f"max rule training anomalies 0: {zero_fp}, monotone: {monotone}, q99(1..100) = {q:.2f}")
    assert ok


def test_11_reproducibility(record):
    cfg = parse_config(SMALL)
    a = run_once(cfg, cfg.run.seed)
    b = run_once(cfg, cfg.run.seed)
    cae_bitwise = all(x.scores == y.scores and x.threshold == y.threshold
                      for x, y in zip(a, b) if x.method == "cae")
    solver = max(float(np.max(np.abs(np.subtract(x.scores, y.scores))))
                 for x, y in zip(a, b) if x.method != "cae")
    same_preds = all(x.predictions == y.predictions for x, y in zip(a, b))
    ok = cae_bitwise and solver <= 1e-9 and same_preds and len(a) == len(b)
    record(11, ok, f"CAE scores bitwise equal: {cae_bitwise}, max solver score difference {solver:.1e}")
    assert ok


def test_12_reconstruction_ordering(record, desk_run):
    reports, _ = desk_run
    cae = reports["cae_q0.99"].extras["train_reconstruction_mse"]
    pca = reports["pca_ocsvm"].extras["train_reconstruction_mse"]
    ica = reports["ica_ocsvm"].extras["train_reconstruction_mse"]
    ok = cae < pca and cae < ica
    record(12, ok, f"training reconstruction MSE: CAE {cae:.2e}, PCA(3) {pca:.2e}, ICA(3) {ica:.2e}")
    assert ok
