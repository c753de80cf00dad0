"""Training loop, checkpoints and feature conversion."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from . import curriculum as cur
from . import tensor as T
from .dsp import CwtScales, SpectralEnvelope
from .features import FeatureSet, load_features
from .losses import LossBundle, LossWeights, fake_term, l1, real_term, total_loss
from .models import (
    ModelSuite,
    build_model_suite,
    identity_generator_params,
    suite_from_manifest,
)
from .optim import adam_step
from .tensor import ConfigError, NumericError, Tensor

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "l_cyc", "l_id", "l_adv_A", "l_adv_B", "total", "lr", "alpha", "beta",
               "input_length_s")
LOSS_NAMES = ("l_cyc", "l_id", "l_adv_A", "l_adv_B", "total")
STREAMS = ("spec", "f0")
GROUPS = ("spec_D", "spec_G", "f0_D", "f0_G")


class CompatibilityError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """A loss became non-finite; the last good checkpoint is left in place."""


@dataclass
class TrainingRunConfig:
    variant: str = "cl"
    manifest: Optional[str] = None
    cache_dir: Optional[str] = None
    run_dir: str = "run"
    max_length_s: float = 2.0
    epochs_per_block: int = cur.EPOCHS_PER_BLOCK
    batch_size: int = 1
    steps_per_epoch: Optional[int] = None
    seed: int = 0
    checkpoint_every: int = 1
    lr: float = cur.LR0
    lr_decay: float = cur.LR_DECAY
    beta1: float = cur.BETA1
    beta2: float = 0.999
    generator: dict = field(default_factory=dict)
    discriminator: dict = field(default_factory=dict)
    f0_discriminator: dict = field(default_factory=dict)
    fft_size: int = 1024
    stop_after_epochs: Optional[int] = None

    def validate(self):
        if self.variant not in ("base", "cl", "all"):
            raise ConfigError(f"unknown variant {self.variant!r}; expected base, cl or all")
        if self.epochs_per_block < 1:
            raise ConfigError("epochs_per_block must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class Corpus:
    """Training features for one emotion pair."""
    domain_a: list
    domain_b: list

    @property
    def spec_channels(self) -> int:
        return self.domain_a[0].envelope.frames.shape[1]


@dataclass
class TrainResult:
    run_dir: Path
    log_path: Path
    history: list
    epochs_run: int


# -- normalization statistics ----------------------------------------------------------

def corpus_stats(corpus: Corpus) -> dict:
    """Per-channel standardization stats for both streams and per-domain log-F0 stats."""
    allf = corpus.domain_a + corpus.domain_b
    spec = np.concatenate([f.envelope.frames.astype(np.float64) for f in allf], axis=0)
    cwt = np.concatenate([f.cwt.coefficients.T.astype(np.float64) for f in allf], axis=0)
    stats = {
        "spec_mean": spec.mean(0).astype(np.float32), "spec_std": np.maximum(spec.std(0), 1e-3).astype(np.float32),
        "f0_mean": cwt.mean(0).astype(np.float32), "f0_std": np.maximum(cwt.std(0), 1e-3).astype(np.float32),
    }
    for key, dom in (("a", corpus.domain_a), ("b", corpus.domain_b)):
        stats[f"logf0_mean_{key}"] = np.float32(np.mean([f.cwt.mean for f in dom]))
        stats[f"logf0_std_{key}"] = np.float32(np.mean([f.cwt.std for f in dom]))
    return stats


def _normalized_arrays(fs: FeatureSet, stats: dict):
    spec = ((fs.envelope.frames - stats["spec_mean"]) / stats["spec_std"]).T
    f0 = ((fs.cwt.coefficients.T - stats["f0_mean"]) / stats["f0_std"]).T
    return np.ascontiguousarray(spec, dtype=np.float32), np.ascontiguousarray(f0, dtype=np.float32)


# -- checkpoints -----------------------------------------------------------------------

def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(run_dir, suite: ModelSuite, stats: dict, opt_states: Optional[dict] = None,
                    training: Optional[dict] = None) -> Path:
    """Write ``checkpoint.evck`` (parameters, Adam moments, stats) and ``manifest.json``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    tensors = {name: p.data for name, p in suite.flat_params().items()}
    for key, value in stats.items():
        tensors[f"stats/{key}"] = np.asarray(value, dtype=np.float32)
    for group, state in (opt_states or {}).items():
        tensors.update(ckpt.adam_to_tensors(state, prefix=f"adam/{group}/"))
    manifest = suite.manifest()
    manifest["training"] = training or {}
    # sorted names keep the file bytes independent of how the state was assembled
    _atomic_write(run_dir / "checkpoint.evck", ckpt.encode_tensors(dict(sorted(tensors.items()))))
    _atomic_write(run_dir / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
    return run_dir


def load_checkpoint(run_dir, expected_variant: Optional[str] = None):
    """Return ``(suite, stats, opt_states, training_info)``."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
        suite = suite_from_manifest(manifest)
    except (OSError, KeyError, ValueError) as exc:
        raise CompatibilityError(f"{run_dir}: unusable model manifest ({exc})") from exc
    if expected_variant is not None and manifest["variant"] != expected_variant:
        raise CompatibilityError(f"checkpoint variant {manifest['variant']!r} != requested {expected_variant!r}")
    tensors = ckpt.load_tensors(run_dir / "checkpoint.evck")
    try:
        suite.load_flat(tensors)
    except KeyError as exc:
        raise CompatibilityError(f"checkpoint lacks parameter {exc} required by its config") from exc
    stats = {k[len("stats/"):]: v for k, v in tensors.items() if k.startswith("stats/")}
    opt_states = {}
    for group in GROUPS:
        if f"adam/{group}/step" in tensors:
            names = [n for n in _group_params(suite, group)]
            opt_states[group] = ckpt.adam_from_tensors(tensors, names, prefix=f"adam/{group}/")
    return suite, stats, opt_states, manifest.get("training", {})


def _group_nets(group: str):
    stream, kind = group.split("_")
    if kind == "G":
        return (f"{stream}_G_ab", f"{stream}_G_ba")
    return (f"{stream}_D_a", f"{stream}_D_b")


def _group_params(suite: ModelSuite, group: str) -> dict:
    return {f"{net}/{key}": p for net in _group_nets(group) for key, p in suite[net].params.items()}


# -- one training step -----------------------------------------------------------------

def _zero_grads(suite: ModelSuite) -> None:
    for p in suite.flat_params().values():
        p.grad = None


def _apply_adam(suite: ModelSuite, group: str, opt_states: dict, lr: float, cfg: TrainingRunConfig) -> None:
    params = _group_params(suite, group)
    arrays = {n: p.data for n, p in params.items()}
    grads = {n: p.grad for n, p in params.items()}
    new, opt_states[group] = adam_step(arrays, grads, lr, cfg.beta1, cfg.beta2, 1e-8, opt_states.get(group))
    for name, arr in new.items():
        net, key = name.split("/", 1)
        suite[net].params[key] = Tensor(arr, requires_grad=True)


def _stream_step(suite: ModelSuite, stream: str, xa: Tensor, xb: Tensor, weights: LossWeights,
                 lr: float, opt_states: dict, cfg: TrainingRunConfig) -> LossBundle:
    G_ab = lambda x: suite[f"{stream}_G_ab"](x, training=True)
    G_ba = lambda x: suite[f"{stream}_G_ba"](x, training=True)
    D_a, D_b = suite[f"{stream}_D_a"], suite[f"{stream}_D_b"]

    # discriminators first, against detached fakes
    with T.no_grad():
        fake_a, fake_b = G_ba(xb), G_ab(xa)
    _zero_grads(suite)
    d_loss = -(real_term(D_a, xa) + fake_term(D_a, fake_a) + real_term(D_b, xb) + fake_term(D_b, fake_b))
    T.backward(d_loss)
    _apply_adam(suite, f"{stream}_D", opt_states, lr, cfg)

    _zero_grads(suite)
    fake_b = G_ab(xa)
    fake_a = G_ba(xb)
    l_cyc = l1(G_ba(fake_b), xa) + l1(G_ab(fake_a), xb)
    l_id = l1(G_ba(xa), xa) + l1(G_ab(xb), xb)
    adv_fake_a = fake_term(D_a, fake_a)
    adv_fake_b = fake_term(D_b, fake_b)
    objective = total_loss(adv_fake_a + adv_fake_b, l_cyc, l_id, weights)
    T.backward(objective)
    _apply_adam(suite, f"{stream}_G", opt_states, lr, cfg)

    with T.no_grad():
        real_a = real_term(D_a, xa).item()
        real_b = real_term(D_b, xb).item()
    return LossBundle.compose(l_cyc.item(), l_id.item(), real_a + adv_fake_a.item(),
                              real_b + adv_fake_b.item(), weights)


# -- training --------------------------------------------------------------------------

def load_corpus(manifest_path, cache_dir) -> Corpus:
    from .manifest import read_manifest

    entries = read_manifest(manifest_path, check_paths=False)
    cache = Path(cache_dir)
    missing = [e.uid for e in entries if not (cache / f"{e.uid}.evcf").exists()]
    if missing:
        raise FileNotFoundError(f"missing feature caches for {len(missing)} utterances "
                                f"(e.g. {missing[0]}); run the `extract` command first")
    labels = sorted({e.emotion for e in entries})
    dom = {lab: [load_features(cache / f"{e.uid}.evcf", e.uid) for e in entries if e.emotion == lab]
           for lab in labels}
    return Corpus(dom[labels[0]], dom[labels[1]])


def _write_log_header(path: Path) -> None:
    path.write_text("\t".join(LOG_COLUMNS) + "\n")


def _truncate_log(path: Path, steps: int) -> None:
    # rows written after the last checkpoint are replayed on resume
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:1 + steps]))


def train(config: TrainingRunConfig, corpus: Optional[Corpus] = None) -> TrainResult:
    """Run the curriculum schedule to completion (or resume an interrupted run)."""
    config.validate()
    if corpus is None:
        corpus = load_corpus(config.manifest, config.cache_dir)
    if not corpus.domain_a or not corpus.domain_b:
        raise cur.DatasetError("both emotion domains need at least one utterance")
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "train_log.tsv"

    steps = config.steps_per_epoch or math.ceil(max(len(corpus.domain_a), len(corpus.domain_b))
                                                 / config.batch_size)
    resume = (run_dir / "manifest.json").exists() and (run_dir / "checkpoint.evck").exists()
    if resume:
        suite, stats, opt_states, info = load_checkpoint(run_dir, expected_variant=config.variant)
        state = cur.CurriculumState(**info["curriculum"])
        rng = np.random.default_rng()
        rng.bit_generator.state = info["rng_state"]
        global_step = info["global_step"]
        epochs_done = info["epochs_done"]
        _truncate_log(log_path, global_step)
        logger.info("resuming %s at epoch %d", run_dir, epochs_done)
    else:
        suite = build_model_suite(config.variant, corpus.spec_channels, seed=config.seed,
                                  generator_overrides=config.generator,
                                  discriminator_overrides=config.discriminator,
                                  f0_discriminator_overrides=config.f0_discriminator)
        stats = corpus_stats(corpus)
        opt_states = {}
        state = cur.initial_state(config.max_length_s, config.epochs_per_block,
                                  curriculum=suite.curriculum, lr0=config.lr, lr_decay=config.lr_decay)
        rng = np.random.default_rng(config.seed)
        global_step = 0
        epochs_done = 0
        _write_log_header(log_path)

    arrays_a = [_normalized_arrays(f, stats) for f in corpus.domain_a]
    arrays_b = [_normalized_arrays(f, stats) for f in corpus.domain_b]
    history = []
    run_epochs = 0
    while not state.done:
        if config.stop_after_epochs is not None and run_epochs >= config.stop_after_epochs:
            break
        active = cur.begin_epoch(state)
        weights = LossWeights(active.alpha, active.beta)
        sums = {s: np.zeros(5) for s in STREAMS}
        rows = []
        for _ in range(steps):
            batch = cur.sample_segments(arrays_a, arrays_b, active.input_length_s, config.batch_size, rng)
            dropout_seed = int(np.random.SeedSequence([config.seed, global_step]).generate_state(1)[0])
            step_sum = np.zeros(5)
            with T.Graph(seed=dropout_seed):
                for stream, xa, xb in (("spec", batch.spec_a, batch.spec_b), ("f0", batch.f0_a, batch.f0_b)):
                    try:
                        bundle = _stream_step(suite, stream, Tensor(xa), Tensor(xb), weights,
                                              active.lr, opt_states, config)
                    except NumericError as exc:
                        raise TrainingAborted(f"non-finite value in {stream} stream at epoch "
                                              f"{epochs_done + 1}, step {global_step + 1}: {exc}") from exc
                    parts = np.array([bundle.l_cyc, bundle.l_id, bundle.l_adv_A, bundle.l_adv_B, bundle.total])
                    sums[stream] += parts
                    step_sum += parts
            global_step += 1
            rows.append({"epoch": epochs_done + 1, "step": global_step,
                         **dict(zip(LOSS_NAMES, step_sum.tolist())),
                         "lr": active.lr, "alpha": active.alpha, "beta": active.beta,
                         "input_length_s": active.input_length_s})
        with open(log_path, "a", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for row in rows:
                w.writerow([repr(row[c]) for c in LOG_COLUMNS])
        means = {s: sums[s] / steps for s in STREAMS}
        epochs_done += 1
        run_epochs += 1
        history.append({"epoch": epochs_done, "step": global_step,
                        **dict(zip(LOSS_NAMES, (means["spec"] + means["f0"]).tolist())),
                        "lr": active.lr, "alpha": active.alpha, "beta": active.beta,
                        "input_length_s": active.input_length_s,
                        "spec": means["spec"].tolist(), "f0": means["f0"].tolist()})
        state = cur.end_epoch(active)
        if state.done or (config.checkpoint_every and epochs_done % config.checkpoint_every == 0):
            info = {"curriculum": state.to_dict(), "rng_state": rng.bit_generator.state,
                    "global_step": global_step, "epochs_done": epochs_done}
            save_checkpoint(run_dir, suite, stats, opt_states, info)
    return TrainResult(run_dir=run_dir, log_path=log_path, history=history, epochs_run=run_epochs)


def read_log(path) -> list:
    with open(path) as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [{k: float(v) for k, v in r.items()} for r in rows]


# -- conversion ------------------------------------------------------------------------

def convert(run_dir, direction: str, features: FeatureSet, expected_variant: Optional[str] = None,
            transfer_f0_stats: bool = True) -> FeatureSet:
    """Convert one utterance's features at full length with a trained checkpoint.

    The envelope goes through the spectrogram generator and the CWT rows
    through the F0 generator; the voicing mask is kept.  With
    ``transfer_f0_stats`` the utterance's log-F0 mean/std are shifted from the
    source-domain averages to the target-domain averages (a log-Gaussian
    linear transform); otherwise they pass through unchanged.
    """
    if direction not in ("a2b", "b2a"):
        raise ValueError(f"direction must be 'a2b' or 'b2a', got {direction!r}")
    suite, stats, _, _ = load_checkpoint(run_dir, expected_variant)
    if stats["spec_mean"].shape[0] != features.envelope.frames.shape[1]:
        raise CompatibilityError("feature envelope size does not match the checkpoint")
    src, dst = ("a", "b") if direction == "a2b" else ("b", "a")
    suffix = "ab" if direction == "a2b" else "ba"
    spec, f0 = _normalized_arrays(features, stats)
    with T.no_grad():
        spec_out = suite[f"spec_G_{suffix}"](Tensor(spec[None])).data[0]
        f0_out = suite[f"f0_G_{suffix}"](Tensor(f0[None])).data[0]
    env = (spec_out.T * stats["spec_std"] + stats["spec_mean"]).astype(np.float32)
    coef = (f0_out.T * stats["f0_std"] + stats["f0_mean"]).T.astype(np.float32)
    mu, sd = features.cwt.mean, features.cwt.std
    if transfer_f0_stats:
        mu = float(mu - stats[f"logf0_mean_{src}"] + stats[f"logf0_mean_{dst}"])
        sd = float(sd * stats[f"logf0_std_{dst}"] / stats[f"logf0_std_{src}"])
    return FeatureSet(
        cwt=CwtScales(coef, mu, sd),
        envelope=SpectralEnvelope(env, features.envelope.fft_size, features.envelope.sample_rate),
        voicing=features.voicing.copy(),
        utterance_id=features.utterance_id,
    )


def write_identity_checkpoint(run_dir, spec_channels: int = 513, f0_channels: int = 10,
                              variant: str = "base", **generator_overrides) -> Path:
    """Checkpoint whose generators reproduce their input (debug/reference conversions)."""
    overrides = {"input_skip": True, **generator_overrides}
    suite = build_model_suite(variant, spec_channels, f0_channels, generator_overrides=overrides)
    for name in ("spec_G_ab", "spec_G_ba", "f0_G_ab", "f0_G_ba"):
        net = suite[name]
        net.params = {k: Tensor(v.data.astype(np.float32), requires_grad=True)
                      for k, v in identity_generator_params(net.config).items()}
    stats = {"spec_mean": np.zeros(spec_channels, np.float32), "spec_std": np.ones(spec_channels, np.float32),
             "f0_mean": np.zeros(f0_channels, np.float32), "f0_std": np.ones(f0_channels, np.float32),
             "logf0_mean_a": np.float32(0), "logf0_std_a": np.float32(1),
             "logf0_mean_b": np.float32(0), "logf0_std_b": np.float32(1)}
    return save_checkpoint(run_dir, suite, stats)
