"""Cycle-consistency, identity and adversarial objectives.

Generators and discriminators are passed as callables.  A discriminator
may return a score tensor or a ``(utterance_scores, frame_scores)`` pair;
frame scores, when present, add a second BCE term weighted like the
utterance term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, NumericError, Tensor


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be >= 0, got alpha={self.alpha}, beta={self.beta}")


@dataclass
class LossBundle:
    l_cyc: float
    l_id: float
    l_adv_A: float
    l_adv_B: float
    total: float

    @classmethod
    def compose(cls, l_cyc, l_id, l_adv_A, l_adv_B, weights: LossWeights) -> "LossBundle":
        total = total_loss(l_adv_A + l_adv_B, l_cyc, l_id, weights)
        return cls(float(l_cyc), float(l_id), float(l_adv_A), float(l_adv_B), float(total))


def l1(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ContractError(f"reconstruction shape {pred.shape} != input shape {target.shape}")
    return T.tabs(pred - target).mean()


def cycle_loss(G_ab, G_ba, batch_a: Tensor, batch_b: Tensor) -> Tensor:
    if batch_a.size == 0 or batch_b.size == 0:
        raise ContractError("cycle_loss needs non-empty batches")
    return l1(G_ba(G_ab(batch_a)), batch_a) + l1(G_ab(G_ba(batch_b)), batch_b)


def identity_loss(G_ab, G_ba, batch_a: Tensor, batch_b: Tensor) -> Tensor:
    if batch_a.size == 0 or batch_b.size == 0:
        raise ContractError("identity_loss needs non-empty batches")
    return l1(G_ba(batch_a), batch_a) + l1(G_ab(batch_b), batch_b)


def _scores(out):
    return out if isinstance(out, tuple) else (out, None)


def _log(scores: Tensor) -> Tensor:
    d = scores.data
    if not ((d > 0) & (d < 1)).all():
        raise NumericError("discriminator score outside (0, 1) before log")
    return T.log(scores)


def _log1m(scores: Tensor) -> Tensor:
    d = scores.data
    if not ((d > 0) & (d < 1)).all():
        raise NumericError("discriminator score outside (0, 1) before log")
    return T.log(1.0 - scores)


def real_term(D, real: Tensor) -> Tensor:
    """E[log D(real)], plus the frame-level average when D is fine-grained."""
    utt, frames = _scores(D(real))
    term = _log(utt).mean()
    if frames is not None:
        term = term + _log(frames).mean()
    return term


def fake_term(D, fake: Tensor) -> Tensor:
    """E[log(1 - D(fake))], plus the frame-level average when D is fine-grained."""
    utt, frames = _scores(D(fake))
    term = _log1m(utt).mean()
    if frames is not None:
        term = term + _log1m(frames).mean()
    return term


def adversarial_losses(D_a, D_b, G_ab, G_ba, batch_a: Tensor, batch_b: Tensor):
    """Return ``(d_loss, g_loss)``.

    Fakes in domain A come from converting B inputs and vice versa.  The
    discriminator loss sees detached fakes; the generator loss keeps them
    attached so gradients reach the generators.
    """
    fake_a = G_ba(batch_b)
    fake_b = G_ab(batch_a)
    d_value = (real_term(D_a, batch_a) + fake_term(D_a, fake_a.detach())
               + real_term(D_b, batch_b) + fake_term(D_b, fake_b.detach()))
    g_loss = fake_term(D_a, fake_a) + fake_term(D_b, fake_b)
    return -d_value, g_loss


def total_loss(l_adv, l_cyc, l_id, weights: LossWeights):
    """L = L_adv + alpha * L_cyc + beta * L_id; works on floats or Tensors."""
    for name, part in (("l_adv", l_adv), ("l_cyc", l_cyc), ("l_id", l_id)):
        value = part.data if isinstance(part, Tensor) else np.asarray(part, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericError(f"non-finite loss term {name}")
    return l_adv + weights.alpha * l_cyc + weights.beta * l_id


def check_finite_bundle(bundle: LossBundle) -> None:
    for name in ("l_cyc", "l_id", "l_adv_A", "l_adv_B", "total"):
        if not math.isfinite(getattr(bundle, name)):
            raise NumericError(f"non-finite loss term {name}")
