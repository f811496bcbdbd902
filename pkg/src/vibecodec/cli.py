"""Command-line entry point.

Every command prints a JSON report (to stdout, or to ``--report``) that
includes the effective configuration. Exit codes: 0 success, 1 usage error,
2 data error, 3 completed with synthesis non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisError, SpectralBasis, fit_basis, project, reconstruct
from .codec import (
    CodecStream,
    EncodedVibration,
    SynthesisConfig,
    compression_stats,
    decode,
    encode,
    read_vbc,
    write_vbc,
)
from .dissimilarity import (
    DissimModel,
    RatingsTable,
    component_ablation,
    design_matrix,
    evaluate_split,
    fit_lasso,
    signal_scores,
)
from .filterbank import band_powers, design_bank, intensity_band_power
from .intensity import non_stationarity
from .signal import Rng, SignalError, load_signal, resample, save_signal
from .space import DistanceMatrix, classical_mds, component_arrow, procrustes

log = logging.getLogger("vibecodec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3
AUDIO_SUFFIXES = (".wav", ".f32", ".raw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class Config:
    bank_fmin: float = 10.0
    bank_fmax: float = 1000.0
    jnd: float = 0.17
    rate: float = 2800.0
    domain: str = "dB"
    k: int | None = None
    seed: int = 0
    tolerance_db: float = 0.1
    max_iter: int = 100
    n_samples: int = 2800

    def synthesis(self, seed: int | None = None) -> SynthesisConfig:
        return SynthesisConfig(self.max_iter, self.tolerance_db, self.seed if seed is None else seed,
                               self.n_samples, self.rate)

    def bank(self):
        return design_bank(self.bank_fmin, self.bank_fmax, self.jnd, self.rate)


CONFIG_KEYS = {f.name for f in fields(Config)}


def resolve_config(args) -> Config:
    """Flags override the JSON config file, which overrides ``VIBECODEC_SEED`` and defaults."""
    values = {}
    env_seed = os.environ.get("VIBECODEC_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"VIBECODEC_SEED must be an integer, got {env_seed!r}")
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = Config(**values)
    if cfg.domain not in ("linear", "dB"):
        raise UsageError(f"--domain must be 'linear' or 'dB', got {cfg.domain!r}")
    return cfg


def common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="JSON file with any of the flags below (dash -> underscore)")
    g.add_argument("--bank-fmin", type=float, help="lowest band edge in Hz (10)")
    g.add_argument("--bank-fmax", type=float, help="highest band edge in Hz (1000)")
    g.add_argument("--jnd", type=float, help="relative frequency JND setting band spacing (0.17)")
    g.add_argument("--rate", type=float, help="analysis sample rate in Hz (2800)")
    g.add_argument("--domain", choices=("linear", "dB"), help="band-power domain for the basis (dB)")
    g.add_argument("--k", type=int, help="number of basis components to use")
    g.add_argument("--seed", type=int, help="RNG seed (falls back to $VIBECODEC_SEED, then 0)")
    g.add_argument("--tolerance-db", type=float, help="synthesis tolerance per band (0.1)")
    g.add_argument("--max-iter", type=int, help="synthesis iteration cap (100)")
    g.add_argument("--n-samples", type=int, help="synthesized length in samples (2800)")
    g.add_argument("--out", help="output path (file or directory, per command)")
    g.add_argument("--report", help="write the JSON report here instead of stdout")
    g.add_argument("--raw-rate", type=float, help="sample rate for headerless .f32/.raw inputs")
    g.add_argument("--resample", action="store_true", help="resample inputs to --rate instead of rejecting them")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _expand(inputs) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(q for q in p.iterdir() if q.suffix.lower() in AUDIO_SUFFIXES)
        else:
            paths.append(p)
    return sorted(paths, key=lambda q: (q.stem, str(q)))


def load_corpus(inputs, cfg: Config, args, errors: list | None = None) -> list:
    """Signals from files and directories, sorted by label.

    With ``errors`` given, unreadable files are recorded there and skipped;
    otherwise the first failure raises.
    """
    out, seen = [], set()
    for path in _expand(inputs):
        try:
            s = load_signal(path, None if args.resample else cfg.rate, args.raw_rate)
            if args.resample:
                s = resample(s, cfg.rate)
            if s.label in seen:
                raise SignalError(f"{path}: duplicate label {s.label!r}")
            seen.add(s.label)
            out.append(s)
        except SignalError as exc:
            if errors is None:
                raise
            errors.append({"path": str(path), "error": str(exc)})
    return out


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def emit(report: dict, args):
    text = json.dumps(_clean(report), indent=1, sort_keys=True) + "\n"
    if getattr(args, "report", None):
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)


def _load_basis(args, bank) -> SpectralBasis:
    if not args.basis:
        raise UsageError("--basis is required")
    try:
        basis = SpectralBasis.load(args.basis)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise BasisError(f"cannot read basis {args.basis}: {exc}")
    if basis.bank_id != bank.identity:
        raise BasisError(f"basis {args.basis} was trained on bank {basis.bank_id}, not {bank.identity}")
    return basis


# ---- commands -------------------------------------------------------------


def cmd_analyze(args, cfg: Config) -> int:
    bank = cfg.bank()
    errors = []
    records = []
    for s in load_corpus(args.inputs, cfg, args, errors):
        try:
            lin = band_powers(s, bank, "linear")
            rec = {
                "label": s.label,
                "band_powers_linear": lin.values,
                "band_powers_db": lin.to("dB").values,
                "intensity": intensity_band_power(s),
            }
            try:
                ns = non_stationarity(s)
                rec["non_stationarity_sigma"] = ns.sigma
            except SignalError:
                rec["non_stationarity_sigma"] = None
            records.append(rec)
        except SignalError as exc:
            errors.append({"path": s.label, "error": str(exc)})
    emit({"config": asdict(cfg), "bank": bank.identity, "centers": bank.centers,
          "records": records, "errors": errors}, args)
    return EXIT_DATA if errors else EXIT_OK


def cmd_train_basis(args, cfg: Config) -> int:
    bank = cfg.bank()
    corpus = load_corpus(args.inputs, cfg, args)
    if len(corpus) < 2:
        raise BasisError(f"corpus too small: {len(corpus)} readable signal(s), need at least 2")
    powers = [band_powers(s, bank, cfg.domain) for s in corpus]
    if cfg.k is not None and args.variance is not None:
        raise UsageError("give --k or --variance, not both")
    basis = fit_basis(powers, k=cfg.k, variance=args.variance)
    if args.out:
        basis.save(args.out)
    scores = {s.label: project(basis, p).t for s, p in zip(corpus, powers)}
    report = {
        "config": asdict(cfg),
        "basis_id": basis.identity,
        "k": basis.k,
        "explained": basis.ratios,
        "cumulative": np.cumsum(basis.ratios),
        "scores": scores,
    }
    if not args.out:
        report["basis"] = basis.to_dict()
    emit(report, args)
    return EXIT_OK


def cmd_encode(args, cfg: Config) -> int:
    bank = cfg.bank()
    basis = _load_basis(args, bank)
    k = basis.k if cfg.k is None else cfg.k
    corpus = load_corpus(args.inputs, cfg, args)
    stream = CodecStream.from_basis(basis, bank, k)
    for s in corpus:
        stream.add(encode(s, basis, bank, k))
    if args.out:
        write_vbc(stream, args.out)
    emit({"config": asdict(cfg), "entries": [e.to_dict() for e in stream.entries],
          "stats": compression_stats(stream, corpus)}, args)
    return EXIT_OK


def _decode_all(entries, stream, cfg: Config, out_dir: Path | None, match_intensity=True):
    results = []
    for i, e in enumerate(sorted(entries, key=lambda e: e.label)):
        res = decode(e, stream, cfg.synthesis(), match_intensity)
        rec = {"label": e.label, "iterations": res.iterations, "max_error_db": res.max_error_db,
               "converged": res.converged}
        if out_dir is not None:
            path = out_dir / f"{e.label or f'entry{i}'}.wav"
            save_signal(res.signal, path)
            rec["path"] = str(path)
        results.append(rec)
    return results


def cmd_decode(args, cfg: Config) -> int:
    stream = read_vbc(args.stream)
    if not math.isclose(stream.sample_rate, cfg.rate):
        cfg.rate = stream.sample_rate
    entries = stream.entries
    if args.label:
        entries = [e for e in entries if e.label in set(args.label)]
        missing = set(args.label) - {e.label for e in entries}
        if missing:
            raise KeyError(f"stream has no entries {sorted(missing)}")
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = _decode_all(entries, stream, cfg, out_dir, not args.anchor)
    emit({"config": asdict(cfg), "decoded": results}, args)
    return EXIT_OK if all(r["converged"] for r in results) else EXIT_NONCONVERGED


def cmd_synth(args, cfg: Config) -> int:
    if args.stream:
        stream = read_vbc(args.stream)
        cfg.rate = stream.sample_rate
    else:
        bank = cfg.bank()
        basis = _load_basis(args, bank)
        stream = CodecStream.from_basis(basis, bank, 1 if cfg.k is None else cfg.k)
    t = np.zeros(stream.k)
    t[0] = args.t1
    if args.t:
        extra = [float(v) for v in args.t.split(",")]
        if len(extra) > stream.k:
            raise UsageError(f"--t has {len(extra)} values, stream carries k={stream.k}")
        t[: len(extra)] = extra
    intensity = args.intensity
    if intensity is None and not args.anchor:
        raise UsageError("--intensity is required (or use --anchor for the unscaled spectrum)")
    e = EncodedVibration(args.label, intensity if intensity is not None else 0.0, t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = decode(e, stream, cfg.synthesis(), match_intensity=not args.anchor)
    if args.out:
        save_signal(res.signal, args.out)
    emit({"config": asdict(cfg), "t": t, "intensity": intensity, "iterations": res.iterations,
          "max_error_db": res.max_error_db, "converged": res.converged,
          "band_powers_db": 10.0 * np.log10(np.maximum(res.powers, 1e-10))}, args)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _dissim_inputs(args, cfg: Config):
    bank = cfg.bank()
    basis = _load_basis(args, bank)
    k = basis.k if cfg.k is None else cfg.k
    table = RatingsTable.read_csv(args.ratings)
    corpus = load_corpus(args.inputs, cfg, args)
    scores = {s.label: signal_scores(s, bank, basis) for s in corpus}
    table.resolve(scores)
    X, y = design_matrix(table, scores, include_self=args.include_self, columns=range(k))
    return basis, table, scores, X, y, k


def cmd_train_dissim(args, cfg: Config) -> int:
    basis, table, scores, X, y, k = _dissim_inputs(args, cfg)
    model = fit_lasso(X, y, folds=args.folds, rng=Rng(cfg.seed), basis_id=basis.identity)
    if args.out:
        model.save(args.out)
    emit({"config": asdict(cfg), "rows": int(y.size), "model": model.to_dict(),
          "converged": model.converged}, args)
    return EXIT_OK


def _upper_pairs(labels):
    return [(a, b) for i, a in enumerate(labels) for b in labels[i + 1 :]]


def cmd_eval(args, cfg: Config) -> int:
    basis, table, scores, X, y, k = _dissim_inputs(args, cfg)
    rng = Rng(cfg.seed)
    split = evaluate_split(X, y, args.train_frac, args.repeats, rng.spawn(1), args.folds)
    ablation = component_ablation(X, y, args.train_frac, args.ablation_repeats, rng.spawn(2), args.folds)
    model = fit_lasso(X, y, folds=args.folds, rng=rng.spawn(3), basis_id=basis.identity)
    report = {"config": asdict(cfg), "rows": int(y.size), "split": split.to_dict(),
              "ablation": ablation, "model": model.to_dict()}

    labels = table.ids
    try:
        human = DistanceMatrix.from_pairs(labels, table.pairs())
    except ValueError as exc:
        report["mds"] = {"skipped": str(exc)}
    else:
        emb_h = classical_mds(human)
        pred = np.zeros((len(labels), len(labels)))
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                if i != j:
                    d = np.abs(scores[a].t[:k] - scores[b].t[:k])
                    pred[i, j] = model.predict_distances(d)
        clipped = int((pred < 0).sum())
        emb_m = classical_mds(DistanceMatrix(np.maximum(pred, 0.0), tuple(labels)))
        pr = procrustes(emb_h, emb_m)
        tvec = np.array([scores[s].t for s in labels])
        arrows = {}
        for j in range(k):
            try:
                arrows[f"t{j + 1}"] = component_arrow(tvec, emb_h, j)
            except ValueError:
                arrows[f"t{j + 1}"] = None
        report["mds"] = {
            "human": emb_h.to_dict(),
            "model": emb_m.to_dict(),
            "model_negative_predictions_clipped": clipped,
            "procrustes": pr.to_dict(labels),
            "arrows": arrows,
        }
    emit(report, args)
    return EXIT_OK


# ---- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = common_flags()
    p = _Parser(prog="vibecodec", description="Perceptual analysis and sparse coding of stationary vibrations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common], help="band powers, intensity and non-stationarity per file")
    a.add_argument("inputs", nargs="+")
    a.set_defaults(func=cmd_analyze)

    a = sub.add_parser("train-basis", parents=[common], help="fit the PCA basis of band-power spectra")
    a.add_argument("inputs", nargs="+")
    a.add_argument("--variance", type=float, help="keep the fewest components reaching this variance fraction")
    a.set_defaults(func=cmd_train_basis)

    a = sub.add_parser("encode", parents=[common], help="encode signals into a .vbc stream")
    a.add_argument("inputs", nargs="+")
    a.add_argument("--basis", required=True)
    a.set_defaults(func=cmd_encode)

    a = sub.add_parser("decode", parents=[common], help="decode a .vbc stream to WAV files (--out is a directory)")
    a.add_argument("stream")
    a.add_argument("--label", action="append", help="decode only these entries (repeatable)")
    a.add_argument("--anchor", action="store_true", help="impose the reconstructed spectrum without intensity matching")
    a.set_defaults(func=cmd_decode)

    a = sub.add_parser("synth", parents=[common], help="synthesize from an intensity and a frequency-balance score")
    a.add_argument("--t1", type=float, required=True)
    a.add_argument("--t", help="comma-separated scores t1,t2,... (overrides --t1 where given)")
    a.add_argument("--intensity", type=float)
    a.add_argument("--anchor", action="store_true", help="skip intensity matching")
    a.add_argument("--label", default="synth")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--basis")
    src.add_argument("--stream")
    a.set_defaults(func=cmd_synth)

    for name, func, text in (("train-dissim", cmd_train_dissim, "fit the Lasso dissimilarity model"),
                             ("eval", cmd_eval, "split R², ablation curves, MDS and Procrustes report")):
        a = sub.add_parser(name, parents=[common], help=text)
        a.add_argument("inputs", nargs="+")
        a.add_argument("--ratings", required=True, help="CSV with stim_a,stim_b,rating")
        a.add_argument("--basis", required=True)
        a.add_argument("--folds", type=int, default=10)
        a.add_argument("--include-self", action="store_true", help="keep (x, x) pairs as training rows")
        if name == "eval":
            a.add_argument("--repeats", type=int, default=100)
            a.add_argument("--ablation-repeats", type=int, default=20)
            a.add_argument("--train-frac", type=float, default=0.8)
        a.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        log.info("effective config: %s", json.dumps(asdict(cfg), sort_keys=True))
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"vibecodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SignalError, BasisError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vibecodec: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
