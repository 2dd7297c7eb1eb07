import numpy as np
import pytest

from eaten import numerics as nx
from eaten.decoder import CELL_CLIP, DecoderParams, StepState, decode_step, lstm_step, warmup
from eaten.domain import VocabularyError
from eaten.numerics import Tensor


def make(seed=0, vocab=8, c=4, n_h=6, n_a=3, d_c=5, scale=1.0):
    return DecoderParams.init(vocab, c, n_h, n_a, d_c, np.random.default_rng(seed), scale)


def zero_all(p):
    for t in p.tensors().values():
        t.data[...] = 0


def test_init_biases():
    p = make(scale=0.08)
    assert not p.b_x.data.any() and not p.b_o.data.any() and not p.attention.b.data.any()
    n = p.n_h
    np.testing.assert_array_equal(p.b_g.data[n:2 * n], 1.0)
    assert not p.b_g.data[:n].any() and not p.b_g.data[2 * n:].any()
    assert np.abs(p.W_x.data).max() <= 0.08


def test_zero_weights_halve_the_carry():
    p = make()
    zero_all(p)
    c = np.array([-4.0, -1.0, 0.0, 0.5, 3.0, 8.0])
    st = lstm_step(Tensor(np.ones(5)), StepState(Tensor(c), Tensor(np.zeros(6))), p)
    np.testing.assert_allclose(st.carry.data, 0.5 * c, atol=1e-15)
    np.testing.assert_allclose(st.hidden.data, 0.5 * np.tanh(0.5 * c), atol=1e-15)


def test_carry_clipped_at_ten():
    p = make()
    zero_all(p)
    n = p.n_h
    p.b_g.data[:n] = 50.0  # input gate open
    p.b_g.data[n:2 * n] = 50.0  # forget gate open
    p.b_g.data[3 * n:] = 50.0  # candidate +1
    st = lstm_step(Tensor(np.zeros(5)), StepState(Tensor(np.full(6, 11.0)), Tensor(np.zeros(6))), p)
    np.testing.assert_array_equal(st.carry.data, CELL_CLIP)
    np.testing.assert_allclose(st.hidden.data, 0.5 * np.tanh(10.0))  # output gate sigmoid(0)


@pytest.mark.parametrize("fused", [True, False])
def test_lstm_gradients(fused):
    rng = np.random.default_rng(1)
    p = make(1, scale=0.5)
    x = Tensor(rng.uniform(-1, 1, (2, 5)))
    c0, h0 = Tensor(rng.uniform(-1, 1, (2, 6))), Tensor(rng.uniform(-1, 1, (2, 6)))
    w = Tensor(rng.standard_normal((2, 6)))

    def f():
        s = lstm_step(x, StepState(c0, h0), p, fused=fused)
        return nx.add(nx.sum_all(nx.mul(s.hidden, w)), nx.sum_all(nx.mul(s.carry, s.carry)))

    errs = nx.finite_diff_check(f, [x, c0, h0, p.W_x, p.W_hh, p.b_g])
    assert max(errs) < 1e-5


def test_fused_cell_matches_composed_including_clip():
    rng = np.random.default_rng(2)
    p = make(2, scale=3.0)
    x = Tensor(rng.standard_normal((4, 5)))
    state = StepState(Tensor(rng.uniform(-10, 10, (4, 6))), Tensor(rng.uniform(-1, 1, (4, 6))))
    a = lstm_step(x, state, p, fused=True)
    b = lstm_step(x, state, p, fused=False)
    np.testing.assert_allclose(a.carry.data, b.carry.data, atol=1e-14)
    np.testing.assert_allclose(a.hidden.data, b.hidden.data, atol=1e-14)


def test_decode_step_zero_params_uniform_logits():
    p = make()
    zero_all(p)
    flat = Tensor(np.random.default_rng(0).standard_normal((5, 4)))
    st, ct, logits, w = decode_step(3, StepState.zeros(6), Tensor(np.zeros(4)), flat, p)
    assert np.all(logits.data == logits.data[0])
    np.testing.assert_allclose(w.data, 0.2)


def test_decode_step_gradient_and_determinism():
    rng = np.random.default_rng(3)
    p = make(3)
    flat = Tensor(rng.uniform(-1, 1, (5, 4)))
    prev_ct = Tensor(rng.uniform(-1, 1, 4))
    s0 = StepState(Tensor(rng.uniform(-1, 1, 6)), Tensor(rng.uniform(-1, 1, 6)))
    target = np.eye(8)[2]

    def f():
        _, _, logits, _ = decode_step(5, s0, prev_ct, flat, p)
        return nx.soft_cross_entropy(nx.reshape(logits, (1, 8)), target[None])

    errs = nx.finite_diff_check(f, list(p.tensors().values()) + [flat, prev_ct])
    assert max(errs) < 1e-4
    with nx.no_grad():
        a = decode_step(5, s0, prev_ct, flat, p)
        b = decode_step(5, s0, prev_ct, flat, p)
    for u, v in zip((a[0].carry, a[0].hidden, a[1], a[2], a[3]), (b[0].carry, b[0].hidden, b[1], b[2], b[3])):
        assert np.array_equal(u.data, v.data)


def test_decode_step_rejects_bad_index():
    p = make()
    with pytest.raises(VocabularyError):
        decode_step(8, StepState.zeros(6), Tensor(np.zeros(4)), Tensor(np.zeros((5, 4))), p)


def test_warmup_zero_params_and_image_dependence():
    p = make()
    zero_all(p)
    s = warmup(Tensor(np.ones((5, 4))), p)
    assert not s.carry.data.any() and not s.hidden.data.any()
    rng = np.random.default_rng(4)
    differ = 0
    for i in range(10):
        q = make(100 + i)
        a = warmup(Tensor(rng.standard_normal((5, 4))), q)
        b = warmup(Tensor(rng.standard_normal((5, 4))), q)
        differ += not np.allclose(a.hidden.data, b.hidden.data)
    assert differ == 10


def test_adversarial_rollout_keeps_carry_bounded():
    rng = np.random.default_rng(5)
    p = make(5, scale=30.0)
    n = p.n_h
    p.b_g.data[:n] = 40.0
    p.b_g.data[n:2 * n] = 40.0
    state = StepState.zeros(n)
    flat = Tensor(rng.standard_normal((5, 4)) * 10)
    ct = Tensor(np.zeros(4))
    worst = 0.0
    with nx.no_grad():
        for t in range(2000):
            state, ct, _, _ = decode_step(int(rng.integers(8)), state, ct, flat, p)
            worst = max(worst, np.abs(state.carry.data).max())
    assert worst <= CELL_CLIP
