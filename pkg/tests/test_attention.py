import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnseq.attention import (
    AttentionState,
    context,
    expected_position,
    gate_and_normalize,
    gate_backward,
    gate_forward,
    gate_shape_dump,
    monotonicity_penalty,
    normalize_backward,
    normalize_forward,
    penalty_backward,
    penalty_forward,
    score,
)
from attnseq.nn import ContractError, softmax


def random_scorer(rng, A=5, S=4, D=6):
    return {"Ws": rng.normal(size=(A, S)), "Wh": rng.normal(size=(A, D)),
            "b": rng.normal(size=A), "v": rng.normal(size=A)}


def random_gate(rng, G=4):
    return {"w": rng.normal(size=G) * 0.3, "b": rng.normal(size=G),
            "v": rng.normal(size=G), "c": np.array(rng.normal())}


def scalar_gate(gate, delta):
    acc = float(gate["c"])
    for j in range(len(gate["w"])):
        acc += gate["v"][j] * math.tanh(gate["w"][j] * delta + gate["b"][j])
    return 1.0 / (1.0 + math.exp(-acc))


def random_simplex(rng, n):
    a = rng.exponential(size=n) ** rng.uniform(0.5, 4)
    return a / a.sum()


# -- scoring -----------------------------------------------------------------


def test_score_zero_output_weights():
    rng = np.random.default_rng(0)
    sc = random_scorer(rng)
    sc["v"] = np.zeros(5)
    np.testing.assert_array_equal(score(rng.normal(size=4), rng.normal(size=(7, 6)), sc), 0.0)


def test_score_shares_weights_across_positions():
    rng = np.random.default_rng(1)
    sc = random_scorer(rng)
    h = rng.normal(size=(5, 6))
    h[3] = h[1]
    e = score(rng.normal(size=4), h, sc)
    assert e[1] == e[3]


def test_score_matches_loop_oracle():
    rng = np.random.default_rng(2)
    sc = random_scorer(rng)
    s, h = rng.normal(size=4), rng.normal(size=(6, 6))
    expect = []
    for i in range(6):
        tot = 0.0
        for a in range(5):
            pre = sc["b"][a] + sum(sc["Ws"][a, k] * s[k] for k in range(4)) \
                + sum(sc["Wh"][a, k] * h[i, k] for k in range(6))
            tot += sc["v"][a] * math.tanh(pre)
        expect.append(tot)
    np.testing.assert_allclose(score(s, h, sc), expect, atol=1e-12, rtol=0)


def test_score_dimension_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(ContractError):
        score(np.zeros(3), np.zeros((4, 6)), random_scorer(rng))


# -- expected position ---------------------------------------------------------


def test_expected_position_examples():
    a = np.zeros(9)
    a[4] = 1.0
    assert expected_position(a) == 5.0
    assert expected_position(np.full(9, 1 / 9)) == pytest.approx(5.0, abs=1e-12)
    rng = np.random.default_rng(4)
    alpha = random_simplex(rng, 13)
    assert expected_position(alpha) == pytest.approx(
        sum(alpha[k] * (k + 1) for k in range(13)), abs=1e-12)


def test_expected_position_rejects_unnormalised():
    with pytest.raises(ContractError):
        expected_position(np.array([0.5, 0.4]))


def test_initial_attention_state_is_anchored_at_first_row():
    st0 = AttentionState.initial(6)
    assert st0.prev_expected_pos == 1.0
    assert st0.prev_alpha[0] == 1.0 and st0.prev_alpha.sum() == 1.0


# -- gating and normalisation ----------------------------------------------------


def test_disabled_gate_is_bitwise_softmax():
    rng = np.random.default_rng(5)
    for _ in range(20):
        e = rng.normal(size=rng.integers(1, 30)) * 4
        g = random_gate(rng)
        assert gate_and_normalize(e, 3.0, g, gating=False).tobytes() == softmax(e).tobytes()
        assert gate_and_normalize(e, 3.0, None).tobytes() == softmax(e).tobytes()
        # the batched kernel used by training and decoding agrees too
        a, _, _ = normalize_forward(e[None], np.ones((1, e.size), bool))
        assert a[0].tobytes() == softmax(e).tobytes()


def test_constant_gate_cancels():
    rng = np.random.default_rng(6)
    g = {"w": np.zeros(3), "b": np.zeros(3), "v": np.zeros(3), "c": np.array(0.7)}
    e = rng.normal(size=8)
    np.testing.assert_allclose(gate_and_normalize(e, 2.5, g), softmax(e), rtol=1e-14)


def test_gate_only_selection():
    e = np.full(3, 0.3)
    d = np.array([0.2, 0.5, 0.3])
    alpha, _, _ = normalize_forward(e[None], np.ones((1, 3), bool), d[None])
    np.testing.assert_allclose(alpha[0], d, rtol=1e-14)


def test_gate_and_normalize_matches_two_pass_oracle():
    rng = np.random.default_rng(7)
    g = random_gate(rng)
    e = rng.normal(size=11) * 3
    prev_E = 4.3
    m = max(e)
    ehat = [scalar_gate(g, (i + 1) - prev_E) * math.exp(e[i] - m) for i in range(11)]
    tot = sum(ehat)
    np.testing.assert_allclose(gate_and_normalize(e, prev_E, g), [x / tot for x in ehat],
                               atol=1e-12, rtol=0)


def test_gate_and_normalize_shift_invariant():
    rng = np.random.default_rng(8)
    g = random_gate(rng)
    e = rng.normal(size=9)
    np.testing.assert_allclose(gate_and_normalize(e + 41.5, 2.0, g),
                               gate_and_normalize(e, 2.0, g), rtol=1e-12)


def test_degenerate_gate_is_floored_and_flagged():
    g = {"w": np.zeros(2), "b": np.zeros(2), "v": np.zeros(2), "c": np.array(-200.0)}
    e = np.array([0.1, 0.4, -0.2])
    d, _ = gate_forward(np.arange(3.0), g)
    alpha, _, degenerate = normalize_forward(e[None], np.ones((1, 3), bool), d[None])
    assert degenerate[0]
    np.testing.assert_allclose(alpha[0], softmax(e), rtol=1e-12)


def test_masked_rows_get_zero_weight():
    e = np.array([[1.0, 2.0, 3.0, 50.0]])
    mask = np.array([[True, True, True, False]])
    alpha, _, _ = normalize_forward(e, mask)
    assert alpha[0, 3] == 0.0
    np.testing.assert_allclose(alpha[0, :3], softmax(e[0, :3]), rtol=1e-14)


# -- context -------------------------------------------------------------------


def test_context_examples():
    rng = np.random.default_rng(9)
    h = rng.normal(size=(5, 4))
    one_hot = np.zeros(5)
    one_hot[2] = 1.0
    np.testing.assert_array_equal(context(one_hot, h), h[2])
    np.testing.assert_allclose(context(np.full(5, 0.2), h), h.mean(axis=0), rtol=1e-12)
    alpha = random_simplex(rng, 5)
    expect = np.zeros(4)
    for i in range(5):
        for k in range(4):
            expect[k] += alpha[i] * h[i, k]
    np.testing.assert_allclose(context(alpha, h), expect, atol=1e-12, rtol=0)


def test_context_length_mismatch():
    with pytest.raises(ContractError):
        context(np.full(3, 1 / 3), np.zeros((4, 2)))


# -- monotonicity penalty --------------------------------------------------------


def one_hot(n, k):
    a = np.zeros(n)
    a[k - 1] = 1.0
    return a


def test_penalty_examples():
    rng = np.random.default_rng(10)
    a = random_simplex(rng, 8)
    assert monotonicity_penalty(a, a) == 0.0
    assert monotonicity_penalty(one_hot(8, 3), one_hot(8, 5)) == 0.0
    assert monotonicity_penalty(one_hot(8, 5), one_hot(8, 3)) == pytest.approx(2.0, abs=1e-12)


def test_penalty_length_mismatch():
    with pytest.raises(ContractError):
        monotonicity_penalty(np.ones(3) / 3, np.ones(4) / 4)


@settings(max_examples=300, deadline=None)
@given(n=st.integers(2, 50), seed=st.integers(0, 2**32 - 1))
def test_penalty_equals_expected_position_drop(n, seed):
    rng = np.random.default_rng(seed)
    prev, cur = random_simplex(rng, n), random_simplex(rng, n)
    drop = max(0.0, expected_position(prev) - expected_position(cur))
    assert abs(monotonicity_penalty(prev, cur) - drop) <= 1e-9


def test_batched_penalty_matches_single_with_padding():
    rng = np.random.default_rng(11)
    prev = np.zeros((2, 7))
    cur = np.zeros((2, 7))
    prev[0], cur[0] = random_simplex(rng, 7), random_simplex(rng, 7)
    prev[1, :4], cur[1, :4] = random_simplex(rng, 4), random_simplex(rng, 4)
    mask = np.array([[True] * 7, [True] * 4 + [False] * 3])
    p, _ = penalty_forward(prev, cur, mask)
    assert p[0] == pytest.approx(monotonicity_penalty(prev[0], cur[0]), abs=1e-14)
    assert p[1] == pytest.approx(monotonicity_penalty(prev[1, :4], cur[1, :4]), abs=1e-14)


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for j in np.ndindex(x.shape):
        o = x[j]
        x[j] = o + eps
        fp = f()
        x[j] = o - eps
        fm = f()
        x[j] = o
        g[j] = (fp - fm) / (2 * eps)
    return g


def test_penalty_and_alignment_gradients():
    rng = np.random.default_rng(12)
    mask = np.array([[True] * 6, [True] * 5 + [False]])
    checked = 0
    for trial in range(40):
        e = rng.normal(size=(2, 6)) * 2
        e_prev = rng.normal(size=(2, 6)) * 2
        delta = rng.normal(size=(2, 6)) * 3
        g = random_gate(rng)
        R = rng.normal(size=2)

        def loss():
            d, _ = gate_forward(delta, g)
            a_cur, _, _ = normalize_forward(e, mask, d)
            a_prev, _, _ = normalize_forward(e_prev, mask)
            p, _ = penalty_forward(a_prev, a_cur, mask)
            return float(R @ p + np.sum(a_cur * np.arange(6)))

        d, gc = gate_forward(delta, g)
        a_cur, nc, _ = normalize_forward(e, mask, d)
        a_prev, nc_prev, _ = normalize_forward(e_prev, mask)
        p, active = penalty_forward(a_prev, a_cur, mask)
        raw = (np.cumsum(a_cur, 1) - np.cumsum(a_prev, 1))
        raw = np.where(mask, raw, 0).sum(1)
        if np.any(np.abs(raw) <= 1e-3):
            continue  # stay away from the hinge
        dprev, dcur = penalty_backward(R, active, mask)
        dcur = dcur + np.arange(6)
        de, dd = normalize_backward(dcur, nc)
        de_prev, _ = normalize_backward(dprev, nc_prev)
        grads = {k: np.zeros_like(v) for k, v in g.items()}
        ddelta = gate_backward(dd, gc, g, grads)
        np.testing.assert_allclose(de, _fd(loss, e), rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(de_prev, _fd(loss, e_prev), rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(ddelta * mask, _fd(loss, delta), rtol=1e-5, atol=1e-8)
        for k in g:
            np.testing.assert_allclose(grads[k], _fd(loss, g[k]), rtol=1e-5, atol=1e-8)
        checked += 1
    assert checked >= 20


# -- gate shape ------------------------------------------------------------------


def test_gate_shape_dump_fresh_gate():
    from attnseq.model import ModelConfig, build_params
    ps = build_params(ModelConfig(), np.random.default_rng(0))
    table = gate_shape_dump(ps.group("attention.gate"), -20, 40, 1)
    assert len(table) == 61
    assert table[0][0] == -20 and table[-1][0] == 40
    assert all(0 < d < 1 for _, d in table)


def test_gate_shape_dump_monotone_construction():
    g = {"w": np.array([0.2]), "b": np.array([0.0]), "v": np.array([3.0]), "c": np.array(0.0)}
    vals = [d for _, d in gate_shape_dump(g, -10, 10, 0.5)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
