import math

import numpy as np
import pytest

from emgspd.exceptions import ParameterError
from emgspd.neural import (
    AdamState,
    adam_step,
    clip_gradients,
    init_params,
    network_backward,
    network_forward,
    pad_batch,
    parameter_count,
    parameter_shapes,
)


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_zero_parameters_give_uniform_output(rng):
    params = {k: np.zeros_like(v) for k, v in init_params(7, 4, 2, 41).items()}
    lp, _ = network_forward(params, rng.standard_normal((9, 7)))
    assert lp.shape == (9, 1, 41)
    np.testing.assert_allclose(lp, math.log(1 / 41), atol=1e-15)


@pytest.mark.parametrize("T", [1, 2, 17])
def test_frame_synchronous_and_normalized(rng, T):
    params = init_params(5, 6, 3, 11, seed=2)
    lp, _ = network_forward(params, rng.standard_normal((T, 5)))
    assert lp.shape[0] == T and np.all(np.isfinite(lp))
    lse = np.log(np.exp(lp).sum(-1))
    assert np.abs(lse).max() < 1e-9


def test_scalar_gru_by_hand():
    Wz, Wr, Wn = 0.5, -0.3, 0.8
    Uz, Ur, Un = 0.2, 0.4, -0.6
    bz, br, bn = 0.1, -0.2, 0.05
    params = {
        "l0.fwd.W": np.array([[Wz, Wr, Wn]]),
        "l0.fwd.U": np.array([[Uz, Ur, Un]]),
        "l0.fwd.b": np.array([bz, br, bn]),
        "out.W": np.array([[1.0, 0.0]]),
        "out.b": np.zeros(2),
    }
    xs = [1.5, -0.7]
    h = 0.0
    expected = []
    for x in xs:
        z = sigmoid(Wz * x + Uz * h + bz)
        r = sigmoid(Wr * x + Ur * h + br)
        n = math.tanh(Wn * x + Un * (r * h) + bn)
        h = (1 - z) * h + z * n
        expected.append(h)
    lp, _ = network_forward(params, np.array(xs)[:, None])
    # output logits are (h, 0): log-softmax of the first class is h - log(e^h + 1)
    for t, hv in enumerate(expected):
        assert lp[t, 0, 0] == pytest.approx(hv - math.log(math.exp(hv) + 1), abs=1e-14)


def _loss(params, x, lengths, upstream):
    lp, _ = network_forward(params, x, lengths)
    return float(np.sum(lp * upstream))


@pytest.mark.parametrize("layers", [1, 2, 3])
@pytest.mark.parametrize("bidirectional", [True, False])
def test_gradients_match_finite_differences(layers, bidirectional):
    rng = np.random.default_rng(layers * 10 + bidirectional)
    params = init_params(4, 3, layers, 5, bidirectional, seed=layers)
    x, lengths = pad_batch([rng.standard_normal((5, 4)), rng.standard_normal((3, 4))])
    upstream = rng.standard_normal((5, 2, 5))
    upstream[3:, 1] = 0.0
    _, cache = network_forward(params, x, lengths)
    grads = network_backward(params, cache, upstream)
    h = 1e-5
    worst = 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _loss(params, x, lengths, upstream)
            p[idx] = old - h
            down = _loss(params, x, lengths, upstream)
            p[idx] = old
            fd = (up - down) / (2 * h)
            g = grads[name][idx]
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-6))
    assert worst < 1e-4


def test_zero_upstream_zero_gradients(rng):
    params = init_params(3, 4, 2, 6)
    _, cache = network_forward(params, rng.standard_normal((4, 3)))
    grads = network_backward(params, cache, np.zeros((4, 1, 6)))
    assert all(not g.any() for g in grads.values())


def test_batch_gradient_is_sum_of_sequence_gradients(rng):
    params = init_params(3, 4, 2, 6, seed=5)
    seqs = [rng.standard_normal((n, 3)) for n in (6, 2, 4)]
    ups = [rng.standard_normal((n, 6)) for n in (6, 2, 4)]
    x, lengths = pad_batch(seqs)
    up = np.zeros((6, 3, 6))
    for i, u in enumerate(ups):
        up[:len(u), i] = u
    _, cache = network_forward(params, x, lengths)
    total = network_backward(params, cache, up)
    parts = {k: np.zeros_like(v) for k, v in params.items()}
    for s, u in zip(seqs, ups):
        _, c = network_forward(params, s)
        for k, g in network_backward(params, c, u[:, None, :]).items():
            parts[k] += g
    for k in params:
        np.testing.assert_allclose(total[k], parts[k], rtol=1e-10, atol=1e-12)


def test_padding_does_not_change_outputs(rng):
    params = init_params(3, 4, 2, 6, seed=1)
    short = rng.standard_normal((3, 3))
    x, lengths = pad_batch([rng.standard_normal((7, 3)), short])
    batched, _ = network_forward(params, x, lengths)
    alone, _ = network_forward(params, short)
    np.testing.assert_allclose(batched[:3, 1], alone[:, 0], rtol=1e-12)


def test_parameter_count_matches_shapes():
    for args in [(961, 256, 3, 41, True), (31, 8, 1, 6, False), (4, 3, 2, 5, True)]:
        brute = sum(int(np.prod(s)) for s in parameter_shapes(*args).values())
        assert parameter_count(*args) == brute
        assert sum(v.size for v in init_params(*args).values()) == brute


def test_input_dim_mismatch():
    with pytest.raises(ParameterError):
        network_forward(init_params(4, 2, 1, 3), np.zeros((5, 3)))


def test_adam_first_step_is_sign():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.3, -5.0, 1e-3])}
    adam_step(p, g, AdamState(p), lr=0.01)
    np.testing.assert_allclose(p["w"], [1.0 - 0.01, -2.0 + 0.01, 3.0 - 0.01], atol=1e-7)


def test_adam_zero_grad_no_decay_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(p), lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_against_scripted_reference(rng):
    w0 = rng.standard_normal(5)
    grads = rng.standard_normal((10, 5))
    lr, wd, b1, b2, eps = 0.01, 1e-3, 0.9, 0.999, 1e-8
    ref, m, v = w0.copy(), np.zeros(5), np.zeros(5)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * wd * ref
        ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    p = {"w": w0.copy()}
    state = AdamState(p)
    for g in grads:
        adam_step(p, {"w": g.copy()}, state, lr, wd)
    assert np.abs(p["w"] - ref).max() < 1e-12


def test_clip_gradients():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_gradients(g, 1.0) == pytest.approx(5.0)
    assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
