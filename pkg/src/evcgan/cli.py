"""``evc`` command line: toy corpus, extraction, training, conversion, round-trip report.

Each successful command prints one JSON summary line on stdout.  Exit
codes: 0 success, 1 input error, 2 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dsp
from .audio import read_wav, write_wav
from .features import extract_features, save_features
from .manifest import ManifestError, read_manifest
from .synthesis import SynthesisConfig, analysis_synthesis_roundtrip, synthesize
from .tensor import ConfigError
from .toy import make_toy_corpus
from .trainer import CompatibilityError, TrainingAborted, TrainingRunConfig, convert, train

logger = logging.getLogger("evcgan")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
INDEX_NAME = "index.json"


class InputFailure(Exception):
    """Reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _summary(**fields) -> int:
    print(json.dumps(fields, sort_keys=True))
    return 0


def _setup_logging() -> None:
    name = os.environ.get("EVC_LOG_LEVEL", "warn").lower()
    if name not in LOG_LEVELS:
        raise InputFailure(f"EVC_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")
    if LOG_LEVELS[name] > logging.DEBUG:
        warnings.simplefilter("ignore", dsp.BoundaryWarning)


# -- make-toy-corpus -------------------------------------------------------------------

def cmd_make_toy_corpus(args) -> int:
    try:
        manifest = make_toy_corpus(args.out_dir, args.n_per_emotion, args.seed)
    except ValueError as exc:
        raise InputFailure(str(exc)) from exc
    return _summary(command="make-toy-corpus", manifest=str(manifest), n_files=2 * args.n_per_emotion)


# -- extract ---------------------------------------------------------------------------

def _extract_one(job):
    uid, path, out, fft_size = job
    warnings.simplefilter("ignore", dsp.BoundaryWarning)
    try:
        x, sr = read_wav(path)
        save_features(out, extract_features(x, sr, fft_size, utterance_id=uid))
        return uid, None
    except Exception as exc:  # collected into the per-file summary
        return uid, f"{type(exc).__name__}: {exc}"


def _file_digest(path: Path, fft_size: int) -> str:
    h = hashlib.sha256(path.read_bytes())
    h.update(f"fft={fft_size}".encode())
    return h.hexdigest()


def run_extract(manifest, cache_dir, fft_size: int = dsp.DEFAULT_FFT_SIZE, workers: int = 1) -> dict:
    """Extract features for every manifest entry, skipping caches whose audio hash is unchanged."""
    entries = read_manifest(manifest)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    index_path = cache / INDEX_NAME
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    jobs, digests, errors = [], {}, {}
    skipped = 0
    for e in entries:
        try:
            digests[e.uid] = _file_digest(e.path, fft_size)
        except OSError as exc:
            errors[e.uid] = f"{e.path}: {exc}"
            continue
        out = cache / f"{e.uid}.evcf"
        if index.get(e.uid) == digests[e.uid] and out.exists():
            skipped += 1
            continue
        jobs.append((e.uid, str(e.path), str(out), fft_size))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    paths = {e.uid: str(e.path) for e in entries}
    written = 0
    for uid, err in results:
        if err is None:
            index[uid] = digests[uid]
            written += 1
        else:
            index.pop(uid, None)
            errors[uid] = f"{paths[uid]}: {err}"
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))
    return {"n_entries": len(entries), "written": written, "skipped": skipped, "errors": errors}


def cmd_extract(args) -> int:
    cfg = _load_config(args.config)
    manifest = args.manifest or cfg.get("manifest")
    cache_dir = args.cache_dir or cfg.get("cache_dir")
    if not manifest or not cache_dir:
        raise InputFailure("extract needs --manifest and --cache-dir (or a config providing them)")
    try:
        report = run_extract(manifest, cache_dir, cfg.get("fft_size", dsp.DEFAULT_FFT_SIZE), args.workers)
    except ManifestError as exc:
        raise InputFailure(str(exc)) from exc
    if report["errors"]:
        for uid, msg in report["errors"].items():
            logger.error("extract failed for %s", msg)
        print(json.dumps({"command": "extract", "status": "error", **report}, sort_keys=True))
        return 1
    return _summary(command="extract", status="ok", **report)


# -- train -----------------------------------------------------------------------------

def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFailure(f"cannot read config {path}: {exc}") from exc


def resolve_config(args) -> TrainingRunConfig:
    """Config file keys overridden by explicit command-line flags."""
    merged = _load_config(args.config)
    for key in ("manifest", "cache_dir", "variant", "seed", "run_dir"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        return TrainingRunConfig.from_dict(merged)
    except (ConfigError, TypeError) as exc:
        raise InputFailure(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if not cfg.manifest or not cfg.cache_dir:
        raise InputFailure("train needs a manifest and a cache directory")
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True))
    try:
        result = train(cfg)
    except FileNotFoundError as exc:
        raise InputFailure(str(exc)) from exc
    except (ManifestError, CompatibilityError) as exc:
        raise InputFailure(str(exc)) from exc
    last = result.history[-1] if result.history else {}
    return _summary(command="train", run_dir=str(run_dir), epochs_run=result.epochs_run,
                    final_l_cyc=last.get("l_cyc"), log=str(result.log_path))


# -- convert ---------------------------------------------------------------------------

def cmd_convert(args) -> int:
    try:
        x, sr = read_wav(args.input)
        feats = extract_features(x, sr, _checkpoint_fft(args.checkpoint))
        out = convert(args.checkpoint, args.direction, feats, expected_variant=args.variant,
                      transfer_f0_stats=not args.keep_f0_stats)
    except (OSError, ValueError) as exc:
        raise InputFailure(str(exc)) from exc
    y = synthesize(out, SynthesisConfig(seed=args.seed or 0))
    write_wav(args.output, y, out.sample_rate)
    f0 = dsp.track_f0(y, out.sample_rate)
    voiced = f0.values[f0.voicing]
    return _summary(command="convert", output=str(args.output), direction=args.direction,
                    n_frames=out.n_frames, duration_s=len(y) / out.sample_rate,
                    median_voiced_f0=float(_median(voiced)))


def _median(v):
    return np.median(v) if len(v) else float("nan")


def _checkpoint_fft(run_dir) -> int:
    cfg = Path(run_dir) / "config.json"
    if cfg.exists():
        return json.loads(cfg.read_text()).get("fft_size", dsp.DEFAULT_FFT_SIZE)
    return dsp.DEFAULT_FFT_SIZE


# -- roundtrip-report ------------------------------------------------------------------

def cmd_roundtrip_report(args) -> int:
    try:
        x, sr = read_wav(args.input)
        report = analysis_synthesis_roundtrip(x, sr)
    except (OSError, ValueError) as exc:
        raise InputFailure(str(exc)) from exc
    return _summary(command="roundtrip-report", input=str(args.input), **report)


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-toy-corpus", help="write the synthetic two-emotion corpus")
    s.add_argument("out_dir")
    s.add_argument("--n-per-emotion", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_toy_corpus)

    s = sub.add_parser("extract", help="cache CWT-F0 and envelope features per utterance")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--cache-dir")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="run the curriculum training schedule")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--cache-dir")
    s.add_argument("--variant", choices=("base", "cl", "all"))
    s.add_argument("--seed", type=int)
    s.add_argument("--run-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", help="convert one WAV with a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--direction", required=True, choices=("a2b", "b2a"))
    s.add_argument("--variant", choices=("base", "cl", "all"))
    s.add_argument("--seed", type=int)
    s.add_argument("--keep-f0-stats", action="store_true",
                   help="pass the utterance's log-F0 mean/std through unchanged")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("roundtrip-report", help="analysis/synthesis fidelity of one WAV")
    s.add_argument("input")
    s.set_defaults(func=cmd_roundtrip_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else 1
    try:
        _setup_logging()
        return args.func(args)
    except InputFailure as exc:
        print(f"evc {args.command}: {exc}", file=sys.stderr)
        return 1
    except TrainingAborted as exc:
        print(f"evc {args.command}: training aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
