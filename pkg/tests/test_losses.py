import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evcgan import tensor as T
from evcgan.curriculum import begin_epoch, initial_state
from evcgan.losses import (
    LossBundle,
    LossWeights,
    adversarial_losses,
    cycle_loss,
    fake_term,
    identity_loss,
    real_term,
    total_loss,
)
from evcgan.tensor import ContractError, NumericError, Tensor


def identity(x):
    return x


def shift(c):
    return lambda x: x + c


def const_disc(value, frames=None):
    def d(x):
        b = x.shape[0]
        utt = Tensor(np.full(b, value))
        if frames is None:
            return utt
        return utt, Tensor(np.full((b, frames), value))
    return d


def batches(seed=0, shape=(2, 3, 8)):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape))


def test_identity_generators_give_exact_zero():
    a, b = batches()
    assert cycle_loss(identity, identity, a, b).item() == 0.0
    assert identity_loss(identity, identity, a, b).item() == 0.0


def test_shift_generators():
    a, b = batches(1)
    # each direction reconstructs with a +2 offset: 2 + 2
    assert cycle_loss(shift(1.0), shift(1.0), a, b).item() == pytest.approx(4.0, abs=1e-12)
    # identity mapping is off by 2 in each domain
    assert identity_loss(shift(2.0), shift(2.0), a, b).item() == pytest.approx(4.0, abs=1e-12)


def test_mutual_inverse_generators_have_zero_cycle_loss():
    a, b = batches(2)
    loss = cycle_loss(shift(0.75), shift(-0.75), a, b).item()
    assert loss == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cycle_loss_is_batch_permutation_invariant(seed):
    a, b = batches(seed % 1000)
    perm = np.random.default_rng(seed).permutation(a.shape[0])
    g1, g2 = shift(0.3), lambda x: x * 0.5
    ref = cycle_loss(g1, g2, a, b).item()
    got = cycle_loss(g1, g2, Tensor(a.data[perm]), Tensor(b.data[perm])).item()
    assert got == pytest.approx(ref, abs=1e-12)


def test_reconstruction_shape_mismatch_is_a_contract_error():
    a, b = batches()
    with pytest.raises(ContractError):
        cycle_loss(lambda x: Tensor(x.data[:, :, :-1]), identity, a, b)
    with pytest.raises(ContractError):
        cycle_loss(identity, identity, Tensor(np.zeros((0, 3, 8))), b)


def test_constant_half_discriminator():
    a, b = batches()
    ln_half = math.log(0.5)
    d = const_disc(0.5)
    assert real_term(d, a).item() == pytest.approx(ln_half, abs=1e-12)
    assert fake_term(d, a).item() == pytest.approx(ln_half, abs=1e-12)
    d_loss, g_loss = adversarial_losses(d, d, identity, identity, a, b)
    assert d_loss.item() == pytest.approx(-4 * ln_half, abs=1e-12)
    assert g_loss.item() == pytest.approx(2 * ln_half, abs=1e-12)


def test_fine_grained_adds_frame_term():
    a, _ = batches()
    assert real_term(const_disc(0.5, frames=4), a).item() == pytest.approx(2 * math.log(0.5), abs=1e-12)


def test_near_perfect_discriminator():
    a, b = batches()

    def d_for(real):
        def d(x):
            hit = x.data is real.data
            return Tensor(np.full(x.shape[0], 1 - 1e-7 if hit else 1e-7))
        return d

    d_a, d_b = d_for(a), d_for(b)
    d_loss, _ = adversarial_losses(d_a, d_b, lambda x: Tensor(x.data + 1), lambda x: Tensor(x.data - 1), a, b)
    assert 0.0 < d_loss.item() < 1e-6


def test_scores_outside_unit_interval_raise():
    a, _ = batches()
    with pytest.raises(NumericError):
        real_term(const_disc(1.0), a)
    with pytest.raises(NumericError):
        fake_term(const_disc(0.0), a)


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 3.0, LossWeights(1.0, 1.0)) == 6.0
    assert total_loss(1.0, 2.0, 3.0, LossWeights(2.0, 1.0)) == 8.0
    assert total_loss(2.0, 2.0, 3.0, LossWeights(1.0, 1.0)) == 7.0
    assert total_loss(4.0, 2.0, 6.0, LossWeights(1.0, 0.5)) == 9.0
    assert total_loss(0.25, 0.0, 0.0, LossWeights()) == 0.25
    with pytest.raises(NumericError):
        total_loss(float("nan"), 1.0, 1.0, LossWeights())
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)


def test_total_loss_uses_live_schedule_weights():
    state = initial_state(2.0, epochs_per_block=10)
    seen = []
    for _ in range(10):
        state = begin_epoch(state)
        w = LossWeights(state.alpha, state.beta)
        seen.append((w.beta, total_loss(1.0, 2.0, 4.0, w)))
    # beta drops to 0.5 once the epoch passes 65% of the block (epochs 7..10 of 10)
    assert seen[:6] == [(1.0, 7.0)] * 6
    assert seen[6:] == [(0.5, 5.0)] * 4


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(-10, 10), st.floats(-10, 10),
       st.sampled_from([0.5, 1.0]))
def test_bundle_total_matches_composition(l_cyc, l_id, adv_a, adv_b, alpha, beta):
    w = LossWeights(abs(alpha), beta)
    bundle = LossBundle.compose(l_cyc, l_id, adv_a, adv_b, w)
    expected = adv_a + adv_b + w.alpha * l_cyc + w.beta * l_id
    assert abs(bundle.total - expected) <= 1e-12 * max(1.0, abs(expected))


def test_total_loss_gradient_reaches_generator_parameters():
    a, b = batches(3)
    wa = Tensor(np.array(1.3), requires_grad=True)
    wb = Tensor(np.array(0.6), requires_grad=True)
    g_ab = lambda x: x * wa  # noqa: E731
    g_ba = lambda x: x * wb  # noqa: E731
    d = const_disc(0.5)
    _, g_adv = adversarial_losses(d, d, g_ab, g_ba, a, b)
    loss = total_loss(g_adv, cycle_loss(g_ab, g_ba, a, b), identity_loss(g_ab, g_ba, a, b), LossWeights(1.0, 0.5))
    T.backward(loss)
    assert wa.grad is not None and wb.grad is not None
    # cycle: |wa*wb - 1| * mean|x| per domain with wa*wb < 1; identity on B: |wa - 1| * mean|b| with wa > 1
    ma, mb = np.abs(a.data).mean(), np.abs(b.data).mean()
    expected_wa = -wb.data * (ma + mb) + 0.5 * mb
    assert float(wa.grad) == pytest.approx(float(expected_wa), rel=1e-12)
