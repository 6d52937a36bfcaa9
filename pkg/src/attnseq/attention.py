"""Content scoring, relative-position gating, context vectors and the
monotonicity penalty.

Input positions are 1-based in every formula that uses them.  Batched
kernels take a boolean ``mask`` (B x T) of valid annotation rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ContractError, NumericError, sigmoid, softmax

SCORER = "attention.scorer"
GATE = "attention.gate"

GATE_FLOOR = 1e-8
DEGENERATE_SUM = 1e-30


@dataclass
class AttentionState:
    prev_alpha: np.ndarray
    prev_expected_pos: float

    @classmethod
    def initial(cls, n: int) -> "AttentionState":
        alpha = np.zeros(n)
        alpha[0] = 1.0
        return cls(alpha, 1.0)


def positions(T: int) -> np.ndarray:
    return np.arange(1, T + 1, dtype=np.float64)


# ---------------------------------------------------------------------------
# content scorer: e_i = v . tanh(Ws s + Wh h_i + b)


def project_annotations(h, scorer):
    """The state-independent half of the scorer, computed once per utterance."""
    return h @ scorer["Wh"].T


def score_forward(s_prev, hproj, scorer):
    pre = hproj + (s_prev @ scorer["Ws"].T + scorer["b"])[..., None, :]
    act = np.tanh(pre)
    return act @ scorer["v"], (s_prev, act)


def score_backward(de, cache, scorer, g):
    """Returns (ds_prev, dhproj); accumulates Ws, b, v grads into ``g``."""
    s_prev, act = cache
    g["v"] += np.einsum("bt,bta->a", de, act)
    dpre = de[..., None] * scorer["v"] * (1.0 - act * act)
    dq = dpre.sum(axis=1)
    g["b"] += dq.sum(axis=0)
    g["Ws"] += dq.T @ s_prev
    return dq @ scorer["Ws"], dpre


def score(s_prev, h, scorer) -> np.ndarray:
    """Scores of one decoder state against every annotation row (I,)."""
    s_prev = np.asarray(s_prev, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    A, S = scorer["Ws"].shape
    if s_prev.shape != (S,) or h.ndim != 2 or h.shape[1] != scorer["Wh"].shape[1]:
        raise ContractError(
            f"score: state {s_prev.shape} / annotations {h.shape} incompatible "
            f"with Ws{scorer['Ws'].shape}, Wh{scorer['Wh'].shape}")
    e, _ = score_forward(s_prev[None], project_annotations(h, scorer)[None], scorer)
    return e[0]


# ---------------------------------------------------------------------------
# relative-position gate d(delta) = sigm(v . tanh(w delta + b) + c)


def gate_forward(delta, gate):
    act = np.tanh(delta[..., None] * gate["w"] + gate["b"])
    d = sigmoid(act @ gate["v"] + gate["c"])
    return d, (delta, act, d)


def gate_backward(dd, cache, gate, g):
    """Returns d(loss)/d(delta); accumulates gate grads into ``g``."""
    delta, act, d = cache
    dq = dd * d * (1.0 - d)
    G = act.shape[-1]
    g["v"] += dq.reshape(-1) @ act.reshape(-1, G)
    g["c"] += dq.sum()
    dpre = dq[..., None] * gate["v"] * (1.0 - act * act)
    g["w"] += delta.reshape(-1) @ dpre.reshape(-1, G)
    g["b"] += dpre.reshape(-1, G).sum(axis=0)
    return dpre @ gate["w"]


def gate_values(gate, delta) -> np.ndarray:
    d, _ = gate_forward(np.asarray(delta, dtype=np.float64), gate)
    return d


def gate_shape_dump(gate, lo: float, hi: float, step: float = 1.0) -> list[tuple[float, float]]:
    """Sample the gate on lo, lo+step, ..., hi (inclusive, up to rounding)."""
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    deltas = lo + step * np.arange(n)
    return list(zip(deltas.tolist(), gate_values(gate, deltas).tolist()))


# ---------------------------------------------------------------------------
# gating + normalisation


def normalize_forward(e, mask, d=None):
    """alpha_i proportional to d_i * exp(e_i - max e) over valid rows.

    Returns (alpha, cache, degenerate) where ``degenerate`` flags rows whose
    gated mass underflowed and had the gate floored.
    """
    em = np.where(mask, e, -np.inf)
    x = np.exp(em - em.max(axis=-1, keepdims=True))
    if d is None:
        tot = x.sum(axis=-1, keepdims=True)
        return x / tot, (x, x, tot, x / tot, None), np.zeros(e.shape[0], bool)
    ehat = d * x
    tot = ehat.sum(axis=-1, keepdims=True)
    degenerate = tot[..., 0] < DEGENERATE_SUM
    floored = None
    if degenerate.any():
        floored = degenerate[:, None] & (d < GATE_FLOOR)
        ehat = np.where(floored, GATE_FLOOR * x, ehat)
        tot = ehat.sum(axis=-1, keepdims=True)
        if not np.all(tot > 0):
            raise NumericError(
                f"attention mass vanished after gate flooring (rows {np.flatnonzero(tot[..., 0] <= 0)})")
    alpha = ehat / tot
    return alpha, (x, ehat, tot, alpha, floored), degenerate


def normalize_backward(dalpha, cache):
    """Returns (de, dd); ``dd`` is None when no gate was applied."""
    x, ehat, tot, alpha, floored = cache
    dehat = (dalpha - (dalpha * alpha).sum(axis=-1, keepdims=True)) / tot
    de = dehat * ehat
    if ehat is x:
        return de, None
    dd = dehat * x
    if floored is not None:
        dd = np.where(floored, 0.0, dd)
    return de, dd


def gate_and_normalize(e, prev_E: float, gate=None, gating: bool = True) -> np.ndarray:
    """Alignment weights for one step from scores ``e`` (I,).

    With ``gating`` off (or no gate given) this is exactly ``softmax(e)``.
    """
    e = np.asarray(e, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ContractError("gate_and_normalize: scores must be finite")
    if not gating or gate is None:
        return softmax(e)
    d = gate_values(gate, positions(e.shape[0]) - prev_E)
    alpha, _, _ = normalize_forward(e[None], np.ones((1, e.shape[0]), bool), d[None])
    return alpha[0]


# ---------------------------------------------------------------------------
# expected position, context, penalty


def _check_simplex(alpha, name="alpha"):
    if abs(float(np.sum(alpha)) - 1.0) > 1e-6 or np.any(alpha < 0):
        raise ContractError(f"{name} is not a probability vector (sum {np.sum(alpha)!r})")


def expected_position(alpha) -> float:
    """Mean 1-based input position under ``alpha``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_simplex(alpha)
    return float(alpha @ positions(alpha.shape[0]))


def context(alpha, h) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    h = np.asarray(h)
    if alpha.shape[0] != h.shape[0]:
        raise ContractError(f"context: {alpha.shape[0]} weights for {h.shape[0]} annotations")
    _check_simplex(alpha)
    return alpha @ h


def penalty_forward(alpha_prev, alpha_cur, mask):
    """Batched max(0, sum_i CDF_cur(i) - CDF_prev(i)) over valid rows."""
    diff = np.cumsum(alpha_cur, axis=-1) - np.cumsum(alpha_prev, axis=-1)
    raw = np.where(mask, diff, 0.0).sum(axis=-1)
    return np.maximum(raw, 0.0), raw > 0


def penalty_backward(dp, active, mask):
    """Returns (dalpha_prev, dalpha_cur); zero on the clipped branch."""
    # d/d alpha_k of sum_i CDF(i) is the number of valid rows i >= k
    tail = np.cumsum(mask[..., ::-1], axis=-1)[..., ::-1] * mask
    dcur = np.where(active, dp, 0.0)[..., None] * tail
    return -dcur, dcur


def monotonicity_penalty(alpha_prev, alpha_cur) -> float:
    """Penalty for attention moving backwards between consecutive steps."""
    alpha_prev = np.asarray(alpha_prev, dtype=np.float64)
    alpha_cur = np.asarray(alpha_cur, dtype=np.float64)
    if alpha_prev.shape != alpha_cur.shape or alpha_prev.ndim != 1:
        raise ContractError(
            f"monotonicity_penalty: shapes {alpha_prev.shape} and {alpha_cur.shape} differ")
    cdf_diff = np.cumsum(alpha_cur) - np.cumsum(alpha_prev)
    return max(0.0, float(cdf_diff.sum()))
