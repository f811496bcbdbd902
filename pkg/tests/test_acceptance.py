"""End-to-end acceptance checks, one test per criterion.

Each test records a status line in ``conftest.ACCEPTANCE`` before asserting,
so the terminal summary lists every criterion with its measured numbers.
"""

import hashlib
import itertools
import os
import subprocess
import sys
import time
import timeit
from pathlib import Path

import numpy as np
from scipy.linalg import subspace_angles

from conftest import ACCEPTANCE
from vibecodec.basis import fit_basis, project, reconstruct
from vibecodec.codec import (
    CodecStream,
    EncodedVibration,
    SynthesisConfig,
    compression_stats,
    decode,
    encode,
    impose_band_powers,
    read_vbc,
    write_vbc,
)
from vibecodec.dissimilarity import (
    RatingsTable,
    design_matrix,
    evaluate_split,
    fit_lasso,
    local_distances,
    predict_dissimilarity,
    signal_scores,
)
from vibecodec.filterbank import BandPowers, band_powers, design_bank, intensity_band_power
from vibecodec.intensity import equalization_gain, fit_intensity
from vibecodec.lasso import lambda_max, lasso_path
from vibecodec.signal import Rng, Signal, load_signal, save_signal
from vibecodec.space import DistanceMatrix, Embedding, classical_mds, component_arrow, pairwise_distances, procrustes
from vibecodec.synthetic import synthetic_corpus


def record(num, ok, detail):
    ACCEPTANCE[num] = ("PASS" if ok else "FAIL", detail)
    return ok


def test_criterion_01_filter_count():
    bank = design_bank(10, 1000, 0.17, 2800)
    ms = 1e3 * min(timeit.repeat(lambda: design_bank(10, 1000, 0.17, 2800), number=1, repeat=20))
    ok = bank.n_bands == 30 and ms < 1.0
    assert record(1, ok, f"{bank.n_bands} bands, design time {ms:.3f} ms")


def test_criterion_02_unit_sines(bank):
    t0 = time.perf_counter()
    worst, misplaced = 0.0, []
    t = np.arange(2800) / 2800.0
    for b, fc in enumerate(bank.centers):
        p = band_powers(Signal(np.sin(2 * np.pi * fc * t), 2800.0), bank).values
        worst = max(worst, abs(p[b] / 0.5 - 1.0))
        if int(np.argmax(p)) != b:
            misplaced.append(b)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.05 and not misplaced and elapsed < 5.0
    assert record(2, ok, f"worst deviation {100 * worst:.2f}%, arg-max misses {misplaced}, {elapsed:.2f} s")


def test_criterion_03_intensity_scaling():
    worst = 0.0
    for i in range(20):
        s = Signal(Rng(i).normal(2800), 2800.0)
        base = intensity_band_power(s)
        for g in (0.5, 1.0, 2.0, 4.0):
            worst = max(worst, abs(intensity_band_power(s.scaled(g)) / (g * g * base) - 1.0))
    assert record(3, worst <= 1e-9, f"max relative error {worst:.2e}")


def test_criterion_04_equalization():
    corpus = synthetic_corpus(18, seed=4, equalize=False, level_jitter_db=12.0)
    ref = intensity_band_power(corpus[0])
    powers = np.array([intensity_band_power(s.scaled(equalization_gain(s, ref))) for s in corpus])
    spread = float(np.max(np.abs(powers / ref - 1.0)))
    raw = np.array([intensity_band_power(s) for s in corpus])
    fit = fit_intensity(raw, 3.2 * raw + 0.1)
    ok = spread <= 1e-9 and abs(fit.r2 - 1.0) <= 1e-9
    assert record(4, ok, f"post-equalization spread {spread:.2e}, noiseless fit R2-1 = {fit.r2 - 1:.1e}")


def test_criterion_05_pca_oracle():
    rng = np.random.default_rng(5)
    bank_id = design_bank().identity
    M0 = rng.normal(size=30) - 20
    Q, _ = np.linalg.qr(rng.normal(size=(30, 3)))
    T = rng.normal(size=(50, 3)) * [6.0, 3.0, 1.5]
    rank3 = [BandPowers(p, "dB", bank_id) for p in M0 + T @ Q.T]
    b = fit_basis(rank3, k=3)
    angle = float(np.max(subspace_angles(b.components.T, Q)))

    P = rng.normal(size=(50, 30)) @ rng.normal(size=(30, 30)) - 20
    full = fit_basis([BandPowers(p, "dB", bank_id) for p in P])
    Pc = P - P.mean(axis=0)
    ev = np.sort(np.linalg.eigvalsh(Pc.T @ Pc / 49))[::-1]
    ratio_err = float(np.max(np.abs(full.ratios - ev / ev.sum())))
    rt = max(
        float(np.max(np.abs(reconstruct(full, project(full, BandPowers(p, "dB", bank_id))).values - p)))
        for p in P
    )
    ok = angle < 1e-4 and ratio_err <= 1e-8 and rt <= 1e-9
    assert record(5, ok, f"max principal angle {angle:.1e} rad, ratio error {ratio_err:.1e}, round trip {rt:.1e}")


def _sparse_problem(seed):
    rng = np.random.default_rng(seed)
    X = np.abs(rng.normal(size=(150, 8)))
    w = np.zeros(8)
    w[0], w[2] = 1.0, 0.5
    signal = X @ w + 0.1
    return X, signal + rng.normal(size=150) * np.sqrt(signal.var() / 10.0)


def _best_subset(X, y, size):
    best_rss, best = np.inf, ()
    for S in itertools.combinations(range(X.shape[1]), size):
        A = np.c_[np.ones(len(y)), X[:, S]]
        r = y - A @ np.linalg.lstsq(A, y, rcond=None)[0]
        if r @ r < best_rss:
            best_rss, best = float(r @ r), S
    return set(best)


def test_criterion_06_lasso_oracle():
    # the oracle is the minimum-RSS subset of the same size as the CV-chosen Lasso support
    matches = contains_truth = exact_truth = 0
    for i in range(100):
        X, y = _sparse_problem(i)
        S = set(np.flatnonzero(fit_lasso(X, y, rng=Rng(i)).weights).tolist())
        matches += S == _best_subset(X, y, len(S))
        contains_truth += {0, 2} <= S
        exact_truth += S == {0, 2}

    X, y = _sparse_problem(0)
    nulls = bool(np.all(lasso_path(X, y, [lambda_max(X, y)]).weights == 0.0))
    x = X[:, :1]
    z = (x[:, 0] - x.mean()) / x.std()
    c = z @ (y - y.mean()) / 150
    st_err = max(
        abs(lasso_path(x, y, [lam]).weights[0, 0] - np.sign(c) * max(abs(c) - lam, 0.0) / x.std())
        for lam in (0.0, 0.05, 0.2, abs(c) / 2, 2 * abs(c))
    )
    ok = matches >= 95 and nulls and st_err <= 1e-6
    detail = (
        f"best-subset match {matches}/100 (need 95; true support kept in {contains_truth}/100, "
        f"exactly recovered in {exact_truth}/100), lambda_max nulls={nulls}, soft-threshold error {st_err:.1e}"
    )
    assert record(6, ok, detail)


def test_criterion_07_dissimilarity_properties(bank, basis, corpus, corpus_scores):
    labels = sorted(corpus_scores)
    t = {s: corpus_scores[s].t for s in labels}
    spread = np.ptp([v[0] for v in t.values()])
    rows = [(a, b, 0.05 + 0.9 * abs(t[a][0] - t[b][0]) / spread) for a, b in itertools.combinations(labels, 2)]
    X, y = design_matrix(RatingsTable(rows), corpus_scores)
    model = fit_lasso(X, y, rng=Rng(7), basis_id=basis.identity)

    sig = {s.label: s for s in corpus}
    reflexive = all(predict_dissimilarity(model, sig[a], sig[a], bank, basis) == model.intercept for a in labels)
    symmetric = all(
        predict_dissimilarity(model, sig[a], sig[b], bank, basis) == predict_dissimilarity(model, sig[b], sig[a], bank, basis)
        for a, b in itertools.combinations(labels[:8], 2)
    )
    nonneg = bool(np.all(model.weights >= 0))
    D = {(a, b): model.predict_distances(local_distances(corpus_scores[a], corpus_scores[b])) for a in labels for b in labels}
    violations = sum(D[a, c] > D[a, b] + D[b, c] + 1e-12 for a, b, c in itertools.combinations(labels, 3))
    ok = reflexive and symmetric and nonneg and violations == 0
    detail = f"D(x,x)=intercept {reflexive}, symmetric {symmetric}, w>=0 {nonneg}, triangle violations {violations}/816"

    ratings_csv = os.environ.get("VIBECODEC_REF_RATINGS")
    corpus_dir = os.environ.get("VIBECODEC_REF_CORPUS")
    if ratings_csv and corpus_dir:
        paths = sorted(Path(corpus_dir).glob("*.wav"))
        ref = [load_signal(p) for p in paths]
        P = [band_powers(s, bank, "dB") for s in ref]
        pb = fit_basis(P, k=int(os.environ.get("VIBECODEC_REF_K", "3")))
        sc = {s.label: signal_scores(s, bank, pb) for s in ref}
        table = RatingsTable.read_csv(ratings_csv)
        table.resolve(sc)
        Xp, yp = design_matrix(table, sc)
        rep = evaluate_split(Xp, yp, repeats=100, rng=Rng(0))
        in_band = 0.32 <= rep.mean <= 0.76
        ok = ok and in_band
        detail += f"; reference ratings R2 {rep.mean:.3f} +/- {rep.sd:.3f} (band [0.32, 0.76])"
    else:
        detail += "; reference ratings not supplied, R2 band not checked"
    assert record(7, ok, detail)


def test_criterion_08_mds_procrustes():
    rng = np.random.default_rng(8)
    dist_err = proc_err = 0.0
    for _ in range(5):
        X = rng.normal(size=(18, 2)) * [2.0, 1.0]
        emb = classical_mds(DistanceMatrix(pairwise_distances(X)))
        dist_err = max(dist_err, float(np.max(np.abs(pairwise_distances(emb.coords) - pairwise_distances(X)))))
        c, s = np.cos(rng.uniform(0, 6)), np.sin(rng.uniform(0, 6))
        R = np.array([[c, -s], [s, c]]) @ np.diag([1, rng.choice([-1, 1])])
        Y = rng.uniform(0.2, 5) * X @ R + rng.normal(size=2)
        proc_err = max(proc_err, procrustes(X, Y).total_error)
    t = np.linspace(-1, 1, 18)
    emb = Embedding(np.c_[2 * t - 0.3, np.abs(t) - np.abs(t).mean()])
    arrow = np.array(component_arrow(t[:, None], emb))
    arrow_err = float(np.max(np.abs(arrow - [1.0, 0.0])))
    ok = dist_err < 1e-8 and proc_err < 1e-9 and arrow_err <= 1e-9
    assert record(8, ok, f"distance error {dist_err:.1e}, Procrustes error {proc_err:.1e}, arrow error {arrow_err:.1e}")


def test_criterion_09_synthesis_convergence(bank, large_corpus_basis):
    b, sd = large_corpus_basis
    worst_err, worst_time, worst_iter, failures = 0.0, 0.0, 0, 0
    for i, t1 in enumerate(np.linspace(-3, 3, 20) * sd):
        target = reconstruct(b, [t1, 0.0, 0.0])
        t0 = time.perf_counter()
        res = impose_band_powers(target, SynthesisConfig(seed=i), bank)
        elapsed = time.perf_counter() - t0
        worst_err = max(worst_err, res.max_error_db)
        worst_time = max(worst_time, elapsed)
        worst_iter = max(worst_iter, res.iterations)
        failures += not (res.converged and res.max_error_db <= 0.1 and res.iterations <= 100 and elapsed < 2.0)
    ok = failures == 0
    detail = f"{20 - failures}/20 converged; worst error {worst_err:.3f} dB, {worst_iter} iterations, {worst_time:.2f} s"
    assert record(9, ok, detail)


def test_criterion_10_codec_round_trip(tmp_path, bank, basis, corpus):
    stream = CodecStream.from_basis(basis, bank, k=1)
    for s in corpus:
        stream.add(encode(s, basis, bank, k=1))
    bound = 0.2 * float(np.abs(stream.components[0]).sum())
    t1 = [e.t[0] for e in stream.entries]
    rng = Rng(10)
    levels = 10 ** (rng.uniform(20) * 2 - 1)
    worst_t = worst_i = 0.0
    for i, (t, level) in enumerate(zip(np.linspace(min(t1), max(t1), 20), levels)):
        e = EncodedVibration(f"e{i:02d}", level, [t])
        res = decode(e, stream, SynthesisConfig(seed=i))
        back = encode(res.signal, stream.basis(), stream.bank(), k=1)
        worst_t = max(worst_t, abs(back.t[0] - float(np.float32(t))))
        worst_i = max(worst_i, abs(back.intensity / e.intensity - 1.0))
        stream.add(e)
    a = write_vbc(stream, tmp_path / "a.vbc")
    b = write_vbc(read_vbc(a), tmp_path / "b.vbc")
    bitwise = a.read_bytes() == b.read_bytes() and read_vbc(a) == stream
    ok = worst_t <= bound and worst_i <= 1e-9 and bitwise
    detail = f"worst t1 error {worst_t:.4f} (bound {bound:.4f}), intensity error {worst_i:.1e}, .vbc bitwise {bitwise}"
    assert record(10, ok, detail)


def test_criterion_11_compression(bank, basis, corpus):
    stream = CodecStream.from_basis(basis, bank, k=1, entries=[encode(s, basis, bank, k=1) for s in corpus])
    stats = compression_stats(stream, corpus)
    pct = 100 * stats["ratio"]
    ok = stats["encoded_values"] == 78 and round(pct, 3) == 0.155
    assert record(11, ok, f"{stats['encoded_values']} values / {stats['original_samples']} samples = {pct:.4f}%")


def _cli_run(workdir: Path, wav_dir: Path):
    env = dict(os.environ, VIBECODEC_SEED="11")
    cmds = [
        ["train-basis", str(wav_dir), "--k", "2", "--out", "basis.json", "--report", "train.json"],
        ["encode", str(wav_dir), "--basis", "basis.json", "--k", "1", "--out", "stream.vbc", "--report", "encode.json"],
        ["decode", "stream.vbc", "--label", "s00", "--label", "s05", "--out", "decoded", "--report", "decode.json"],
        ["synth", "--stream", "stream.vbc", "--t1", "1.5", "--intensity", "0.2", "--out", "synth.wav", "--report", "synth.json"],
    ]
    for c in cmds:
        subprocess.run([sys.executable, "-m", "vibecodec", *c], cwd=workdir, env=env, check=True, capture_output=True)
    return {
        str(p.relative_to(workdir)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(workdir.rglob("*"))
        if p.is_file()
    }


def test_criterion_12_determinism(tmp_path):
    wav_dir = tmp_path / "wav"
    wav_dir.mkdir()
    for s in synthetic_corpus(8, seed=12):
        save_signal(s, wav_dir / f"{s.label}.wav")
    runs = []
    for name in ("run1", "run2"):
        (tmp_path / name).mkdir()
        runs.append(_cli_run(tmp_path / name, wav_dir))
    ok = runs[0] == runs[1] and len(runs[0]) >= 8
    assert record(12, ok, f"{len(runs[0])} artifacts, sha256 identical across 2 runs: {runs[0] == runs[1]}")
