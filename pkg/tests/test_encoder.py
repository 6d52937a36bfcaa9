import numpy as np
import pytest

from attnseq.encoder import (
    append_terminal_frame,
    encode,
    encoder_backward,
    encoder_forward,
    framewise_logits,
    framewise_loss,
)
from attnseq.model import build_params
from attnseq.nn import ConfigError, gradcheck, logsumexp

from conftest import roughen, tiny_config


def test_append_terminal_frame():
    x = np.arange(6.0).reshape(3, 2)
    y = append_terminal_frame(x)
    assert y.shape == (4, 2)
    np.testing.assert_array_equal(y[-1], [0, 0])
    np.testing.assert_array_equal(y[:3], x)
    twice = append_terminal_frame(y)
    assert twice.shape == (5, 2) and not twice[-2:].any()
    assert append_terminal_frame(np.ones((1, 4))).shape == (2, 4)


def test_zero_weights_give_zero_annotations():
    ps = build_params(tiny_config(), np.random.default_rng(0))
    for n in ps.names("encoder.fwd") + ps.names("encoder.bwd"):
        ps[n] = 0.0
    h = encode(np.random.default_rng(1).normal(size=(6, 3)), ps)
    assert h.shape == (7, 8)
    assert not h.any()


def test_annotation_shape():
    ps = build_params(tiny_config(feat_dim=4, enc_hidden=5), np.random.default_rng(0))
    x = np.random.default_rng(2).normal(size=(8, 4))
    assert encode(x, ps, terminal=False).shape == (8, 10)
    assert encode(x, ps).shape == (9, 10)


def test_terminal_frame_enters_after_the_maxout_stack():
    ps = build_params(tiny_config(), np.random.default_rng(0))
    for n in ps.names("encoder.maxout"):
        ps[n] = ps[n] + 1.0  # maxout of a zero frame would be non-zero
    x = np.random.default_rng(3).normal(size=(4, 3))
    _, _, cache = encoder_forward(ps, x[None], [4])
    U = cache[1]
    assert U.shape[1] == 5
    assert not U[0, 4].any()


def test_reversal_symmetry():
    rng = np.random.default_rng(4)
    ps = roughen(build_params(tiny_config(), rng), rng)
    x = rng.normal(size=(6, 3))
    h = encode(x, ps, terminal=False)
    swapped = ps.copy()
    for k in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "W", "U", "b"):
        swapped[f"encoder.fwd.{k}"] = ps[f"encoder.bwd.{k}"]
        swapped[f"encoder.bwd.{k}"] = ps[f"encoder.fwd.{k}"]
    hr = encode(x[::-1], swapped, terminal=False)
    H = 4
    expect = np.concatenate([h[::-1, H:], h[::-1, :H]], axis=1)
    np.testing.assert_allclose(hr, expect, rtol=1e-13, atol=1e-15)


def test_padding_does_not_change_annotations(tiny_params, tiny_batch):
    h, mask, _ = encoder_forward(tiny_params, tiny_batch.feats, tiny_batch.lengths)
    assert mask.sum(axis=1).tolist() == [8, 6]
    single = encode(tiny_batch.feats[1, :5], tiny_params)
    np.testing.assert_allclose(h[1, :6], single, rtol=1e-13, atol=1e-15)


def test_feature_dimension_mismatch():
    ps = build_params(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        encode(np.zeros((5, 4)), ps)


def test_gradcheck_through_both_directions(tiny_params, tiny_batch):
    R = np.random.default_rng(5).normal(size=(2, 8, 8))

    def loss(p):
        h, mask, cache = encoder_forward(p, tiny_batch.feats, tiny_batch.lengths)
        grads = p.zero_grads()
        encoder_backward(R * mask[..., None], cache, p, grads)
        return float(np.sum(R * h * mask[..., None])), grads

    report = gradcheck(loss, tiny_params, names=tiny_params.names("encoder."))
    assert report.passed, str(report)
    assert any(n.startswith("encoder.bwd") for n in report.errors)


def test_frozen_stack_gets_no_gradient(tiny_params, tiny_batch):
    h, mask, cache = encoder_forward(tiny_params, tiny_batch.feats, tiny_batch.lengths)
    grads = tiny_params.zero_grads()
    encoder_backward(np.ones_like(h), cache, tiny_params, grads, freeze_ff=True)
    for n in tiny_params.names("encoder.maxout"):
        assert not grads[n].any()
    assert grads["encoder.fwd.W"].any()


# -- frame-level head ------------------------------------------------------------


def test_framewise_zero_head_is_uniform():
    ps = build_params(tiny_config(frame_classes=6), np.random.default_rng(0))
    ps["encoder.pretrain.W"] = 0.0
    ps["encoder.pretrain.b"] = 0.0
    logp = framewise_logits(np.random.default_rng(1).normal(size=(5, 3)), ps)
    np.testing.assert_allclose(logp, -np.log(6), rtol=1e-14)
    labels = np.array([[0, 3, 5, 1, 2]])
    loss, _ = framewise_loss(ps, np.random.default_rng(1).normal(size=(1, 5, 3)), labels)
    assert loss == pytest.approx(np.log(6), rel=1e-14)


def test_framewise_rows_are_log_distributions():
    rng = np.random.default_rng(2)
    ps = roughen(build_params(tiny_config(frame_classes=4), rng), rng)
    logp = framewise_logits(rng.normal(size=(9, 3)) * 3, ps)
    assert np.max(np.abs(logsumexp(logp))) <= 1e-10


def test_framewise_gradcheck():
    rng = np.random.default_rng(3)
    ps = roughen(build_params(tiny_config(frame_classes=4), rng), rng)
    x = rng.normal(size=(2, 6, 3))
    labels = np.array([[0, 1, 1, 2, 3, 3], [2, 2, 0, 1, -1, -1]])
    report = gradcheck(lambda p: framewise_loss(p, x, labels), ps,
                       names=ps.names("encoder.maxout") + ps.names("encoder.pretrain"))
    assert report.passed, str(report)


def test_missing_pretrain_head():
    ps = build_params(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        framewise_logits(np.zeros((3, 3)), ps)
