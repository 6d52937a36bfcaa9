"""Attention-driven output RNN.

One decoding step: score the previous state against all annotations, gate
and normalise into alignment weights, build the context, update the gated
recurrent state with ``[embed(y_prev); context]`` and predict the next
symbol from ``maxout([embed(y_prev); state; context])`` followed by an
affine softmax layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from .nn import (
    GATE_NAMES,
    ContractError,
    ParamStore,
    affine_backward,
    gate_input_projection,
    gated_core,
    gated_core_backward,
    log_softmax,
    maxout,
    maxout_backward,
)
from .vocab import Vocabulary

EMBED = "decoder.embed"
F = "decoder.f"
G_MAXOUT = "decoder.g.maxout"
G_OUT = "decoder.g.out"
S0 = "decoder.s0"


@dataclass
class DecoderStepOutput:
    state: np.ndarray
    alpha: np.ndarray
    context: np.ndarray
    log_probs: np.ndarray
    att_state: att.AttentionState


class StepCache:
    __slots__ = ("y_prev", "emb", "sc", "gc", "nc", "alpha", "u", "core",
                 "q", "mc", "mo", "logp", "s")


def initial_state(params: ParamStore, n_annotations: int = 1):
    """Learned initial decoder state and the attention state anchored at row 1."""
    return params[S0].copy(), att.AttentionState.initial(n_annotations)


def step_forward(params: ParamStore, s_prev, y_prev, h, hproj, mask,
                 prev_E, gating: bool):
    """Batched decoder step.

    ``s_prev`` (B x S), ``y_prev`` (B,) int, ``h`` (B x T x 2H), ``hproj``
    (B x T x A), ``mask`` (B x T), ``prev_E`` (B,).  Returns
    ``(state, alpha, log_probs, expected_pos, cache)``.
    """
    c_ = StepCache()
    scorer = params.group(att.SCORER)
    emb = params[EMBED][y_prev]
    e, c_.sc = att.score_forward(s_prev, hproj, scorer)
    d = None
    c_.gc = None
    if gating:
        delta = att.positions(h.shape[1])[None, :] - prev_E[:, None]
        d, c_.gc = att.gate_forward(delta, params.group(att.GATE))
    alpha, c_.nc, _ = att.normalize_forward(e, mask, d)
    ctx = np.matmul(alpha[:, None, :], h)[:, 0]
    u = np.concatenate([emb, ctx], axis=-1)
    fP = params.group(F)
    xz, xr, xn = gate_input_projection(u, fP)
    s, c_.core = gated_core(s_prev, xz, xr, xn, fP)
    q = np.concatenate([emb, s, ctx], axis=-1)
    mo, c_.mc = maxout(q, params[f"{G_MAXOUT}.W"], params[f"{G_MAXOUT}.b"])
    logp = log_softmax(mo @ params[f"{G_OUT}.W"].T + params[f"{G_OUT}.b"])
    E = alpha @ att.positions(h.shape[1])
    c_.y_prev, c_.emb, c_.alpha, c_.u, c_.q, c_.mo, c_.logp, c_.s = (
        y_prev, emb, alpha, u, q, mo, logp, s)
    return s, alpha, ctx, logp, E, c_


def step_backward(params: ParamStore, cache: StepCache, dlogits, ds, dalpha,
                  h, grads):
    """Backward through one step.

    ``dlogits`` is the gradient w.r.t. the pre-softmax output, ``ds`` w.r.t.
    the new state and ``dalpha`` w.r.t. this step's alignment (from later
    uses such as the expected position and the penalty).  Returns
    ``(ds_prev, dprev_E, dh, dhproj)``.
    """
    c_ = cache
    Edim = c_.emb.shape[-1]
    S = c_.s.shape[-1]
    dmo, dW, db = affine_backward(dlogits, c_.mo, params[f"{G_OUT}.W"])
    grads[f"{G_OUT}.W"] += dW
    grads[f"{G_OUT}.b"] += db
    dq, dW, db = maxout_backward(dmo, c_.mc, params[f"{G_MAXOUT}.W"])
    grads[f"{G_MAXOUT}.W"] += dW
    grads[f"{G_MAXOUT}.b"] += db
    demb = dq[:, :Edim]
    ds = ds + dq[:, Edim:Edim + S]
    dctx = dq[:, Edim + S:]

    fP = params.group(F)
    gF = {k: grads[f"{F}.{k}"] for k in GATE_NAMES}
    ds_prev, dxz, dxr, dxn = gated_core_backward(ds, c_.core, fP, gF)
    du = dxz @ fP["Wz"] + dxr @ fP["Wr"] + dxn @ fP["W"]
    for dx, w, b in ((dxz, "Wz", "bz"), (dxr, "Wr", "br"), (dxn, "W", "b")):
        gF[w] += dx.T @ c_.u
        gF[b] += dx.sum(axis=0)
    demb = demb + du[:, :Edim]
    dctx = dctx + du[:, Edim:]

    dalpha = dalpha + np.matmul(h, dctx[:, :, None])[..., 0]
    dh = c_.alpha[..., None] * dctx[:, None, :]
    de, dd = att.normalize_backward(dalpha, c_.nc)
    dprev_E = None
    if dd is not None:
        gG = {k: grads[f"{att.GATE}.{k}"] for k in ("w", "b", "v", "c")}
        ddelta = att.gate_backward(dd, c_.gc, params.group(att.GATE), gG)
        dprev_E = -ddelta.sum(axis=-1)
    gS = {k: grads[f"{att.SCORER}.{k}"] for k in ("Ws", "b", "v")}
    ds_att, dhproj = att.score_backward(de, c_.sc, params.group(att.SCORER), gS)
    np.add.at(grads[EMBED], c_.y_prev, demb)
    return ds_prev + ds_att, dprev_E, dh, dhproj


def decoder_step(s_prev, y_prev: int, h, att_state: att.AttentionState,
                 params: ParamStore, gating: bool = False) -> DecoderStepOutput:
    """Single-utterance decoder step (wrapper around the batched kernel)."""
    V = params[EMBED].shape[0]
    if not 0 <= int(y_prev) < V:
        raise ContractError(f"token {y_prev} outside vocabulary of size {V}")
    h = np.asarray(h, dtype=params.dtype)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ContractError("decoder_step needs a non-empty annotation sequence")
    hproj = att.project_annotations(h, params.group(att.SCORER))
    mask = np.ones((1, h.shape[0]), bool)
    s, alpha, ctx, logp, E, _ = step_forward(
        params, np.asarray(s_prev)[None], np.array([y_prev]), h[None], hproj[None],
        mask, np.array([att_state.prev_expected_pos]), gating)
    return DecoderStepOutput(s[0], alpha[0], ctx[0], logp[0],
                             att.AttentionState(alpha[0], float(E[0])))


# ---------------------------------------------------------------------------
# teacher-forced unroll


@dataclass
class Unroll:
    loglik: np.ndarray       # (B,) summed target log-probabilities
    penalty: np.ndarray      # (B,) summed monotonicity penalties
    alphas: np.ndarray       # (B, O, T)
    caches: list
    pen_active: list
    hproj: np.ndarray


def unroll_forward(params: ParamStore, h, mask, y_in, y_out, out_mask,
                   gating: bool, penalty: bool) -> Unroll:
    """Teacher-forced pass over padded targets (B x O)."""
    B, T, _ = h.shape
    O = y_in.shape[1]
    hproj = att.project_annotations(h, params.group(att.SCORER))
    s = np.broadcast_to(params[S0], (B, params[S0].shape[0]))
    alpha_prev = np.zeros((B, T), dtype=h.dtype)
    alpha_prev[:, 0] = 1.0
    E = np.ones(B, dtype=h.dtype)
    loglik = np.zeros(B, dtype=h.dtype)
    pen = np.zeros(B, dtype=h.dtype)
    alphas = np.zeros((B, O, T), dtype=h.dtype)
    caches, active = [], []
    for o in range(O):
        s, alpha, _, logp, E, cache = step_forward(
            params, s, y_in[:, o], h, hproj, mask, E, gating)
        loglik += logp[np.arange(B), y_out[:, o]] * out_mask[:, o]
        if penalty:
            p, act = att.penalty_forward(alpha_prev, alpha, mask)
            pen += p * out_mask[:, o]
            active.append(act & (out_mask[:, o] > 0))
        alphas[:, o] = alpha
        caches.append(cache)
        alpha_prev = alpha
    return Unroll(loglik, pen, alphas, caches, active, hproj)


def unroll_backward(params: ParamStore, un: Unroll, h, mask, y_out, out_mask,
                    w_nll, w_pen, grads):
    """Gradient of ``sum_b w_nll[b] * (-loglik[b]) + w_pen[b] * penalty[b]``.

    Returns dL/dh (B x T x 2H); parameter grads accumulate into ``grads``.
    """
    B, T, _ = h.shape
    O = len(un.caches)
    pos = att.positions(T)
    dh = np.zeros_like(h)
    dhproj = np.zeros_like(un.hproj)
    ds = np.zeros((B, params[S0].shape[0]), dtype=h.dtype)
    dalpha_carry = np.zeros((B, T), dtype=h.dtype)
    wn = np.asarray(w_nll)[:, None] * out_mask
    for o in range(O - 1, -1, -1):
        c_ = un.caches[o]
        dlogits = np.exp(c_.logp) * wn[:, o, None]
        dlogits[np.arange(B), y_out[:, o]] -= wn[:, o]
        dalpha = dalpha_carry
        dalpha_prev_pen = None
        if un.pen_active:
            dprev, dcur = att.penalty_backward(w_pen, un.pen_active[o], mask)
            dalpha = dalpha + dcur
            dalpha_prev_pen = dprev
        ds, dprev_E, dh_o, dhp_o = step_backward(params, c_, dlogits, ds, dalpha, h, grads)
        dh += dh_o
        dhproj += dhp_o
        dalpha_carry = np.zeros((B, T), dtype=h.dtype)
        if dprev_E is not None:
            dalpha_carry = dalpha_carry + dprev_E[:, None] * pos * mask
        if dalpha_prev_pen is not None:
            dalpha_carry = dalpha_carry + dalpha_prev_pen
    grads[S0] += ds.sum(axis=0)
    scorer = params.group(att.SCORER)
    grads[f"{att.SCORER}.Wh"] += dhproj.reshape(-1, dhproj.shape[-1]).T @ h.reshape(-1, h.shape[-1])
    dh += dhproj @ scorer["Wh"]
    return dh


def teacher_forced_unroll(h, target, params: ParamStore, gating: bool = False,
                          penalty: bool = True):
    """Single-utterance teacher-forced pass.

    ``target`` holds token ids and must end with EOS.  Returns
    ``(loglik, alignment (O x I), penalty_sum)``.
    """
    target = [int(t) for t in target]
    if not target or target[-1] != Vocabulary.eos:
        raise ContractError("target must be non-empty and end with EOS")
    if Vocabulary.bos in target:
        raise ContractError("target must not contain BOS")
    h = np.asarray(h, dtype=params.dtype)
    y_out = np.array([target])
    y_in = np.array([[Vocabulary.bos] + target[:-1]])
    un = unroll_forward(params, h[None], np.ones((1, h.shape[0]), bool), y_in, y_out,
                        np.ones((1, len(target))), gating, penalty)
    return float(un.loglik[0]), un.alphas[0], float(un.penalty[0])
