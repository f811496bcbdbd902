import csv
import itertools
import json

import numpy as np
import pytest

from vibecodec.cli import main
from vibecodec.signal import Rng, Signal, save_signal
from vibecodec.synthetic import synthetic_corpus, tilted_noise


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, (json.loads(out) if out.strip() else None), err


@pytest.fixture(scope="module")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    for s in synthetic_corpus(18, seed=1):
        save_signal(s, d / f"{s.label}.wav")
    return d


@pytest.fixture(scope="module")
def basis_path(wav_dir, tmp_path_factory):
    p = tmp_path_factory.mktemp("basis") / "basis.json"
    assert main(["train-basis", str(wav_dir), "--k", "3", "--out", str(p), "--report", str(p.with_suffix(".rep"))]) == 0
    return p


def test_analyze_records_sorted(capsys, wav_dir):
    rc, rep, _ = run(capsys, "analyze", wav_dir)
    assert rc == 0
    labels = [r["label"] for r in rep["records"]]
    assert labels == sorted(labels) and len(labels) == 18
    assert all(len(r["band_powers_db"]) == 30 for r in rep["records"])
    assert rep["config"]["seed"] == 0 and rep["bank"].startswith("wb30")


def test_analyze_silence(capsys, tmp_path):
    save_signal(Signal(np.zeros(2800), 2800.0), tmp_path / "quiet.wav")
    rc, rep, _ = run(capsys, "analyze", tmp_path / "quiet.wav")
    assert rc == 0
    r = rep["records"][0]
    assert r["intensity"] == 0.0
    assert r["band_powers_db"] == [-100.0] * 30


def test_analyze_reports_bad_files(capsys, tmp_path, wav_dir):
    (tmp_path / "junk.wav").write_bytes(b"nope")
    rc, rep, _ = run(capsys, "analyze", wav_dir / "s00.wav", tmp_path / "junk.wav")
    assert rc == 2
    assert len(rep["records"]) == 1 and "junk" in rep["errors"][0]["path"]


def test_train_basis_rank_one(capsys, tmp_path):
    base = tilted_noise(Rng(0), 1.0)
    for i, g in enumerate((0.5, 1.0, 2.0, 3.0)):
        save_signal(Signal(base.samples * g, 2800.0), tmp_path / f"g{i}.wav")
    rc, rep, _ = run(capsys, "train-basis", tmp_path)
    assert rc == 0
    assert rep["explained"][0] == pytest.approx(1.0, abs=1e-6)


def test_train_basis_identical_files(capsys, tmp_path):
    s = tilted_noise(Rng(0), 0.0)
    for i in range(3):
        save_signal(s, tmp_path / f"same{i}.wav")
    rc, rep, err = run(capsys, "train-basis", tmp_path)
    assert rc == 2 and rep is None
    assert "zero variance" in err


def test_train_basis_k_and_variance_conflict(capsys, wav_dir):
    rc, _, err = run(capsys, "train-basis", wav_dir, "--k", "2", "--variance", "0.9")
    assert rc == 1


def test_encode_counts(capsys, wav_dir, basis_path, tmp_path):
    rc, rep, _ = run(capsys, "encode", wav_dir, "--basis", basis_path, "--k", "1", "--out", tmp_path / "c.vbc")
    assert rc == 0
    assert rep["stats"]["encoded_values"] == 78
    assert rep["stats"]["original_samples"] == 50400
    assert (tmp_path / "c.vbc").read_bytes()[:4] == b"VBC1"


@pytest.fixture(scope="module")
def stream_path(wav_dir, basis_path, tmp_path_factory):
    p = tmp_path_factory.mktemp("stream") / "c.vbc"
    rep = p.with_suffix(".json")
    assert main(["encode", str(wav_dir), "--basis", str(basis_path), "--k", "1", "--out", str(p), "--report", str(rep)]) == 0
    return p


def test_decode_writes_wavs(capsys, stream_path, tmp_path):
    rc, rep, _ = run(capsys, "decode", stream_path, "--label", "s03", "--label", "s07", "--out", tmp_path / "dec")
    assert rc == 0
    assert [r["label"] for r in rep["decoded"]] == ["s03", "s07"]
    assert (tmp_path / "dec" / "s03.wav").exists()


def test_decode_unknown_label(capsys, stream_path):
    rc, _, err = run(capsys, "decode", stream_path, "--label", "nope")
    assert rc == 2 and "nope" in err


def test_synth_slope_follows_t1(capsys, stream_path, basis_path, tmp_path):
    scores = json.loads(basis_path.with_suffix(".rep").read_text())["scores"]
    t1 = [v[0] for v in scores.values()]
    slopes = []
    for value in (min(t1), max(t1)):
        rc, rep, _ = run(capsys, "synth", "--stream", stream_path, "--t1", value, "--intensity", 0.01)
        assert rc == 0 and rep["converged"]
        p = np.array(rep["band_powers_db"])
        slopes.append(np.polyfit(np.arange(30), p, 1)[0])
    assert np.sign(slopes[0]) != np.sign(slopes[1])


def test_synth_anchor_and_usage(capsys, basis_path, tmp_path):
    rc, rep, _ = run(capsys, "synth", "--basis", basis_path, "--t1", 0, "--anchor", "--out", tmp_path / "m.wav")
    assert rc == 0 and (tmp_path / "m.wav").exists()
    rc, _, err = run(capsys, "synth", "--basis", basis_path, "--t1", 0)
    assert rc == 1 and "--intensity" in err


def test_synth_non_convergence_exit_code(capsys, basis_path):
    rc, rep, _ = run(capsys, "synth", "--basis", basis_path, "--t1", 3, "--intensity", 0.01,
                     "--max-iter", 1, "--tolerance-db", 1e-6)
    assert rc == 3 and rep["converged"] is False


def write_ratings(path, wav_dir, basis_path, missing=None):
    scores = json.loads(basis_path.with_suffix(".rep").read_text())["scores"]
    labels = sorted(scores)
    spread = max(v[0] for v in scores.values()) - min(v[0] for v in scores.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stim_a", "stim_b", "rating"])
        for a, b in itertools.combinations(labels, 2):
            r = 0.05 + 0.9 * abs(scores[a][0] - scores[b][0]) / spread
            w.writerow([a, b, f"{r:.6f}"])
        if missing:
            w.writerow([labels[0], missing, "0.5"])
    return path


def test_train_dissim(capsys, wav_dir, basis_path, tmp_path):
    ratings = write_ratings(tmp_path / "r.csv", wav_dir, basis_path)
    rc, rep, _ = run(capsys, "train-dissim", wav_dir, "--ratings", ratings, "--basis", basis_path, "--out", tmp_path / "m.json")
    assert rc == 0 and rep["rows"] == 153
    saved = json.loads((tmp_path / "m.json").read_text())
    assert set(saved) >= {"w", "intercept", "lambda", "basis_id"}
    assert saved["w"][0] > 0


def test_dissim_missing_id(capsys, wav_dir, basis_path, tmp_path):
    ratings = write_ratings(tmp_path / "r.csv", wav_dir, basis_path, missing="ghost")
    rc, _, err = run(capsys, "train-dissim", wav_dir, "--ratings", ratings, "--basis", basis_path)
    assert rc == 2 and "ghost" in err


def test_eval_report(capsys, wav_dir, basis_path, tmp_path):
    ratings = write_ratings(tmp_path / "r.csv", wav_dir, basis_path)
    rc, rep, _ = run(capsys, "eval", wav_dir, "--ratings", ratings, "--basis", basis_path,
                     "--repeats", 10, "--ablation-repeats", 3)
    assert rc == 0
    assert rep["split"]["r2_mean"] > 0.99
    assert len(rep["ablation"]["solo"]) == 3
    assert len(rep["mds"]["human"]["coords"]) == 18
    assert abs(rep["mds"]["arrows"]["t1"][0]) > 0.9


def test_missing_arguments_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["encode"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_missing_file_exit_2(capsys, tmp_path):
    rc, _, err = run(capsys, "train-basis", tmp_path / "none.wav", tmp_path / "other.wav")
    assert rc == 2


def test_rate_mismatch_and_resample(capsys, tmp_path):
    save_signal(Signal(Rng(0).normal(4410), 4410.0), tmp_path / "hi.wav")
    rc, _, err = run(capsys, "analyze", tmp_path / "hi.wav")
    assert rc == 2
    rc, rep, _ = run(capsys, "analyze", tmp_path / "hi.wav", "--resample")
    assert rc == 0 and len(rep["records"]) == 1


def test_config_precedence(capsys, wav_dir, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "tolerance_db": 0.2}))
    monkeypatch.setenv("VIBECODEC_SEED", "9")
    target = wav_dir / "s00.wav"
    assert run(capsys, "analyze", target)[1]["config"]["seed"] == 9
    rep = run(capsys, "analyze", target, "--config", cfg)[1]
    assert rep["config"]["seed"] == 5 and rep["config"]["tolerance_db"] == 0.2
    assert run(capsys, "analyze", target, "--config", cfg, "--seed", 2)[1]["config"]["seed"] == 2


def test_bad_config(capsys, wav_dir, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(capsys, "analyze", wav_dir / "s00.wav", "--config", cfg)[0] == 1
    monkeypatch.setenv("VIBECODEC_SEED", "abc")
    assert run(capsys, "analyze", wav_dir / "s00.wav")[0] == 1
