"""Maxout feed-forward cascade followed by a bidirectional gated RNN."""
from __future__ import annotations

import numpy as np

from .nn import (
    GATE_NAMES,
    ConfigError,
    ParamStore,
    gate_input_projection,
    gated_core,
    gated_core_backward,
    log_softmax,
    maxout,
    maxout_backward,
)

MAXOUT = "encoder.maxout"
FWD = "encoder.fwd"
BWD = "encoder.bwd"
PRETRAIN = "encoder.pretrain"


def append_terminal_frame(x: np.ndarray) -> np.ndarray:
    """Return ``x`` (I x D) with one all-zero row appended."""
    x = np.asarray(x)
    return np.concatenate([x, np.zeros((1,) + x.shape[1:], dtype=x.dtype)], axis=0)


def maxout_layers(params: ParamStore) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    i = 0
    while f"{MAXOUT}.{i}.W" in params:
        out.append((params[f"{MAXOUT}.{i}.W"], params[f"{MAXOUT}.{i}.b"]))
        i += 1
    return out


def _maxout_stack(x, params):
    layers = maxout_layers(params)
    if not layers:
        raise ConfigError("encoder has no maxout layers")
    if x.shape[-1] != layers[0][0].shape[2]:
        raise ConfigError(
            f"feature dimension {x.shape[-1]} does not match maxout input "
            f"{layers[0][0].shape[2]}")
    caches = []
    u = x
    for W, b in layers:
        u, c = maxout(u, W, b)
        caches.append(c)
    return u, caches


def _maxout_stack_backward(du, caches, params, grads):
    for i in reversed(range(len(caches))):
        W = params[f"{MAXOUT}.{i}.W"]
        du, dW, db = maxout_backward(du, caches[i], W)
        grads[f"{MAXOUT}.{i}.W"] += dW
        grads[f"{MAXOUT}.{i}.b"] += db


def length_mask(lengths, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def _rnn(U, mask, P, reverse: bool):
    B, T, _ = U.shape
    H = P["Uz"].shape[0]
    xz, xr, xn = gate_input_projection(U, P)
    s = np.zeros((B, H), dtype=U.dtype)
    out = np.zeros((B, T, H), dtype=U.dtype)
    caches = [None] * T
    full = mask.all(axis=0)
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        s_new, caches[t] = gated_core(s, xz[:, t], xr[:, t], xn[:, t], P)
        s = s_new if full[t] else np.where(mask[:, t, None], s_new, s)
        out[:, t] = s
    return out, caches


def _rnn_backward_dir(dout, U, mask, caches, P, g, reverse: bool):
    B, T, H = dout.shape
    dxz = np.zeros_like(dout)
    dxr = np.zeros_like(dout)
    dxn = np.zeros_like(dout)
    full = mask.all(axis=0)
    ds = np.zeros((B, H), dtype=dout.dtype)
    for t in (range(T) if reverse else range(T - 1, -1, -1)):
        ds = ds + dout[:, t]
        if full[t]:
            ds_new, carry = ds, 0.0
        else:
            m = mask[:, t, None]
            ds_new, carry = np.where(m, ds, 0.0), np.where(m, 0.0, ds)
        dsp, dxz[:, t], dxr[:, t], dxn[:, t] = gated_core_backward(
            ds_new, caches[t], P, g)
        ds = dsp + carry
    U2 = U.reshape(-1, U.shape[-1])
    for d, w, b in ((dxz, "Wz", "bz"), (dxr, "Wr", "br"), (dxn, "W", "b")):
        d2 = d.reshape(-1, H)
        g[w] += d2.T @ U2
        g[b] += d2.sum(axis=0)
    return dxz @ P["Wz"] + dxr @ P["Wr"] + dxn @ P["W"]


def encoder_forward(params: ParamStore, x: np.ndarray, lengths, terminal: bool = True):
    """Batched encoding of padded features ``x`` (B x T x F).

    Returns ``(h, mask, cache)`` where ``h`` is (B x T' x 2H) and ``mask``
    marks valid annotation rows.  With ``terminal`` a zero frame is appended
    after the maxout cascade, so T' = T + 1 and each utterance gains a row.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    B, T, _ = x.shape
    u, mcaches = _maxout_stack(x, params)
    valid = length_mask(lengths, T)
    n_ann = lengths + 1 if terminal else lengths
    Tp = T + 1 if terminal else T
    U = np.zeros((B, Tp, u.shape[-1]), dtype=u.dtype)
    U[:, :T] = np.where(valid[..., None], u, 0.0)
    mask = length_mask(n_ann, Tp)
    Pf, Pb = params.group(FWD), params.group(BWD)
    hf, cf = _rnn(U, mask, Pf, reverse=False)
    hb, cb = _rnn(U, mask, Pb, reverse=True)
    h = np.concatenate([hf, hb], axis=-1)
    return h, mask, (x, U, valid, mask, mcaches, cf, cb, T)


def encoder_backward(dh, cache, params: ParamStore, grads: dict, freeze_ff: bool = False):
    """Accumulate encoder gradients into ``grads``.

    With ``freeze_ff`` the maxout cascade receives no gradient at all.
    """
    x, U, valid, mask, mcaches, cf, cb, T = cache
    H = dh.shape[-1] // 2
    Pf, Pb = params.group(FWD), params.group(BWD)
    gf = {k: grads[f"{FWD}.{k}"] for k in GATE_NAMES}
    gb = {k: grads[f"{BWD}.{k}"] for k in GATE_NAMES}
    dU = _rnn_backward_dir(dh[..., :H], U, mask, cf, Pf, gf, reverse=False)
    dU += _rnn_backward_dir(dh[..., H:], U, mask, cb, Pb, gb, reverse=True)
    if freeze_ff:
        return
    du = np.where(valid[..., None], dU[:, :T], 0.0)
    _maxout_stack_backward(du, mcaches, params, grads)


def encode(x: np.ndarray, params: ParamStore, terminal: bool = True) -> np.ndarray:
    """Annotations for a single utterance ``x`` (I x F)."""
    x = np.asarray(x, dtype=params.dtype)
    h, _, _ = encoder_forward(params, x[None], [x.shape[0]], terminal=terminal)
    return h[0]


# ---------------------------------------------------------------------------
# frame-level pretraining head


def framewise_forward(params: ParamStore, x: np.ndarray):
    if f"{PRETRAIN}.W" not in params:
        raise ConfigError("encoder has no pretraining head")
    u, mcaches = _maxout_stack(x, params)
    logits = u @ params[f"{PRETRAIN}.W"].T + params[f"{PRETRAIN}.b"]
    return log_softmax(logits), (u, mcaches)


def framewise_logits(x: np.ndarray, params: ParamStore) -> np.ndarray:
    """Per-frame log-probabilities over frame-label classes (I x C)."""
    logp, _ = framewise_forward(params, np.asarray(x, dtype=params.dtype))
    return logp


def framewise_loss(params: ParamStore, x, labels):
    """Mean per-frame cross-entropy over a padded batch, with gradients.

    ``labels`` is (B x T) with -1 marking padding.
    """
    labels = np.asarray(labels)
    logp, (u, mcaches) = framewise_forward(params, x)
    valid = labels >= 0
    n = max(int(valid.sum()), 1)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -float((picked * valid).sum()) / n
    grads = {name: np.zeros_like(params[name]) for name in params.names("encoder.")}
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, safe[..., None],
                      np.take_along_axis(dlogits, safe[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= valid[..., None] / n
    W = params[f"{PRETRAIN}.W"]
    d2 = dlogits.reshape(-1, dlogits.shape[-1])
    grads[f"{PRETRAIN}.W"] += d2.T @ u.reshape(-1, u.shape[-1])
    grads[f"{PRETRAIN}.b"] += d2.sum(axis=0)
    _maxout_stack_backward(dlogits @ W, mcaches, params, grads)
    return loss, grads
