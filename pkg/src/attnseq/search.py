"""Greedy and beam-search decoding over a trained model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from .decoder import S0, step_forward
from .encoder import encode
from .model import Model
from .nn import ConfigError, ContractError
from .vocab import Vocabulary

BOS, EOS = Vocabulary.bos, Vocabulary.eos


@dataclass
class Hypothesis:
    tokens: list                 # content token ids, EOS excluded
    log_prob: float
    state: np.ndarray = field(repr=False)
    att_state: att.AttentionState = field(repr=False)
    finished: bool = False
    rows: list = field(default_factory=list, repr=False)

    @property
    def alignment(self) -> np.ndarray:
        return np.array(self.rows)


@dataclass
class NBestList:
    hypotheses: list
    width: int
    fallback: bool = False      # no hypothesis reached EOS within the cap

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]


class _Context:
    """Encoded utterance shared by every hypothesis."""

    def __init__(self, model: Model, features):
        self.model = model
        self.h = encode(np.asarray(features, dtype=model.params.dtype), model.params)
        self.hproj = att.project_annotations(self.h, model.params.group(att.SCORER))
        self.T = self.h.shape[0]

    def step(self, states, y_prev, prev_E):
        N = states.shape[0]
        h = np.broadcast_to(self.h, (N,) + self.h.shape)
        hp = np.broadcast_to(self.hproj, (N,) + self.hproj.shape)
        mask = np.ones((N, self.T), bool)
        s, alpha, _, logp, E, _ = step_forward(
            self.model.params, states, np.asarray(y_prev), h, hp, mask,
            np.asarray(prev_E, dtype=self.h.dtype), self.model.gating)
        return s, alpha, logp, E

    def root(self) -> Hypothesis:
        return Hypothesis([], 0.0, self.model.params[S0].copy(),
                          att.AttentionState.initial(self.T))


def greedy_decode(model: Model, features) -> Hypothesis:
    """Most likely symbol at each step until EOS or one step per annotation."""
    ctx = _Context(model, features)
    hyp = ctx.root()
    y = BOS
    for _ in range(ctx.T):
        s, alpha, logp, E = ctx.step(hyp.state[None], [y], [hyp.att_state.prev_expected_pos])
        lp = logp[0].copy()
        lp[BOS] = -np.inf
        y = int(np.argmax(lp))
        hyp.log_prob += float(lp[y])
        hyp.state = s[0]
        hyp.att_state = att.AttentionState(alpha[0], float(E[0]))
        hyp.rows.append(alpha[0])
        if y == EOS:
            hyp.finished = True
            break
        hyp.tokens.append(y)
    return hyp


def beam_decode(model: Model, features, width: int = 10, n_best: int = 1) -> NBestList:
    """Beam search without length normalisation.

    At each step all live hypotheses are extended by every symbol and the
    ``width`` best extensions survive.  Extensions ending in EOS retire to a
    completed pool and stop competing; the search ends once the pool holds
    ``width`` hypotheses, nothing is live, or the length cap is reached.

    Completed hypotheses come first, best first.  If fewer than ``n_best``
    completed, the list is padded with the best unfinished ones
    (``finished`` is False); with none completed, ``fallback`` is set.
    """
    if width < 1:
        raise ConfigError(f"beam width must be >= 1, got {width}")
    ctx = _Context(model, features)
    live = [ctx.root()]
    pool: list[Hypothesis] = []
    for step in range(ctx.T):
        states = np.stack([hp.state for hp in live])
        y_prev = [hp.tokens[-1] if hp.tokens else BOS for hp in live]
        prev_E = [hp.att_state.prev_expected_pos for hp in live]
        s, alpha, logp, E = ctx.step(states, y_prev, prev_E)
        logp = logp.copy()
        logp[:, BOS] = -np.inf
        scores = np.array([hp.log_prob for hp in live])[:, None] + logp
        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")[:width]
        V = logp.shape[1]
        nxt = []
        for k in order:
            if not np.isfinite(flat[k]):
                break
            i, y = divmod(int(k), V)
            parent = live[i]
            child = Hypothesis(
                parent.tokens + ([] if y == EOS else [y]),
                parent.log_prob + float(logp[i, y]), s[i],
                att.AttentionState(alpha[i], float(E[i])),
                finished=(y == EOS), rows=parent.rows + [alpha[i]])
            (pool if y == EOS else nxt).append(child)
        live = nxt
        if len(pool) >= width or not live:
            break
    n_best = max(n_best, 1)
    ranked = sorted(pool, key=lambda hp: -hp.log_prob)
    if len(ranked) < n_best:
        # pad with unfinished hypotheses (flagged), ranked after every completed one
        ranked += sorted(live, key=lambda hp: -hp.log_prob)[:n_best - len(ranked)]
    return NBestList(ranked[:n_best], width, fallback=not pool)


def dump_alignment(model: Model, features, tokens, finished: bool = True) -> np.ndarray:
    """Replay ``tokens`` (content ids) and return the alignment rows.

    With ``finished`` the EOS step is replayed too, matching what greedy and
    beam search record for a completed hypothesis.
    """
    V = len(model.vocab)
    for t in tokens:
        if not 2 <= int(t) < V:
            raise ContractError(f"token {t} is not a content symbol")
    ctx = _Context(model, features)
    hyp = ctx.root()
    rows = []
    y = BOS
    for nxt in list(tokens) + ([EOS] if finished else []):
        s, alpha, _, E = ctx.step(hyp.state[None], [y], [hyp.att_state.prev_expected_pos])
        hyp.state = s[0]
        hyp.att_state = att.AttentionState(alpha[0], float(E[0]))
        rows.append(alpha[0])
        y = int(nxt)
    return np.array(rows)
