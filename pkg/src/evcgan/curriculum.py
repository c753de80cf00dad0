"""Curriculum schedule over input segment length, and segment sampling.

Each block runs ``epochs_per_block`` epochs at a fixed segment length.  Past
65% of a block the identity weight drops to 0.5 and the learning rate
decreases by 5e-8 per epoch; at the block boundary the length grows by
0.5 s (clamped to the maximum) and the weights reset.  Training stops after
the block at the maximum length.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dsp import FRAME_SHIFT

LR0 = 2e-4
LR_DECAY = 5e-8
BETA1 = 0.5
LENGTH_STEP = 0.5
MIN_LENGTH = 0.5
EPOCHS_PER_BLOCK = 500
DECAY_FRACTION = 0.65
BETA_LATE = 0.5


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CurriculumState:
    max_length_s: float
    input_length_s: float = MIN_LENGTH
    epochs_per_block: int = EPOCHS_PER_BLOCK
    epoch_in_block: int = 0
    block_index: int = 0
    decay_steps: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    lr0: float = LR0
    lr_decay: float = LR_DECAY
    done: bool = False

    @property
    def lr(self) -> float:
        # exact decimal arithmetic, so repeated decrements never drift
        return float(Fraction(repr(self.lr0)) - self.decay_steps * Fraction(repr(self.lr_decay)))

    def to_dict(self) -> dict:
        return asdict(self)


def initial_state(max_length_s: float, epochs_per_block: int = EPOCHS_PER_BLOCK,
                  curriculum: bool = True, lr0: float = LR0, lr_decay: float = LR_DECAY) -> CurriculumState:
    """Curriculum starts at 0.5 s; without curriculum a single block runs at full length."""
    if max_length_s < MIN_LENGTH:
        raise ValueError(f"max_length_s must be >= {MIN_LENGTH}, got {max_length_s}")
    if epochs_per_block < 1:
        raise ValueError(f"epochs_per_block must be >= 1, got {epochs_per_block}")
    start = MIN_LENGTH if curriculum else max_length_s
    return CurriculumState(max_length_s=max_length_s, input_length_s=min(start, max_length_s),
                           epochs_per_block=epochs_per_block, lr0=lr0, lr_decay=lr_decay)


def begin_epoch(state: CurriculumState) -> CurriculumState:
    """Enter the next epoch of the block; the result holds the values used for training it."""
    if state.done:
        raise ValueError("curriculum already finished")
    epoch = state.epoch_in_block + 1
    if epoch > DECAY_FRACTION * state.epochs_per_block:
        return replace(state, epoch_in_block=epoch, alpha=1.0, beta=BETA_LATE,
                       decay_steps=state.decay_steps + 1)
    return replace(state, epoch_in_block=epoch)


def end_epoch(state: CurriculumState) -> CurriculumState:
    """Close the epoch; at the end of a block grow the length and reset the weights."""
    if state.epoch_in_block < state.epochs_per_block:
        return state
    finished = state.input_length_s >= state.max_length_s
    return replace(state,
                   input_length_s=min(state.input_length_s + LENGTH_STEP, state.max_length_s),
                   alpha=1.0, beta=1.0, epoch_in_block=0,
                   block_index=state.block_index + 1, done=finished)


def advance_epoch(state: CurriculumState) -> CurriculumState:
    return end_epoch(begin_epoch(state))


def schedule_trace(state: CurriculumState) -> list:
    """Per-epoch ``(epoch, block, epoch_in_block, lr, alpha, beta, input_length_s)`` until done."""
    rows = []
    epoch = 0
    while not state.done:
        cur = begin_epoch(state)
        epoch += 1
        rows.append((epoch, cur.block_index, cur.epoch_in_block, cur.lr, cur.alpha, cur.beta,
                     cur.input_length_s))
        state = end_epoch(cur)
    return rows


def crop_frames(input_length_s: float) -> int:
    return int(math.ceil(input_length_s / FRAME_SHIFT - 1e-9))


def _crop(arr: np.ndarray, start: int, n: int) -> np.ndarray:
    """Crop ``n`` frames along the last axis, reflect-padding short utterances."""
    t = arr.shape[-1]
    if t >= n:
        return arr[..., start:start + n]
    widths = [(0, 0)] * (arr.ndim - 1) + [(0, n - t)]
    return np.pad(arr, widths, mode="reflect" if t > 1 else "edge")


@dataclass
class Batch:
    spec_a: np.ndarray      # [B, F, n]
    spec_b: np.ndarray
    f0_a: np.ndarray        # [B, 10, n]
    f0_b: np.ndarray
    picks_a: list           # (utterance index, start frame)
    picks_b: list


def sample_segments(domain_a: Sequence, domain_b: Sequence, input_length_s: float, batch_size: int,
                    rng: np.random.Generator) -> Batch:
    """Independent random crops from A and B (non-parallel pairing).

    ``domain_a``/``domain_b`` hold ``(spec [F, T], f0 [10, T])`` array pairs.
    """
    if input_length_s < MIN_LENGTH:
        raise ValueError(f"input_length_s must be >= {MIN_LENGTH}, got {input_length_s}")
    if not domain_a or not domain_b:
        raise DatasetError("both emotion domains need at least one utterance")
    n = crop_frames(input_length_s)
    out = {}
    for key, dom in (("a", domain_a), ("b", domain_b)):
        specs, f0s, picks = [], [], []
        for _ in range(batch_size):
            u = int(rng.integers(len(dom)))
            spec, f0 = dom[u]
            t = spec.shape[-1]
            start = int(rng.integers(t - n + 1)) if t >= n else 0
            specs.append(_crop(spec, start, n))
            f0s.append(_crop(f0, start, n))
            picks.append((u, start))
        out[key] = (np.stack(specs), np.stack(f0s), picks)
    return Batch(out["a"][0], out["b"][0], out["a"][1], out["b"][1], out["a"][2], out["b"][2])
