"""Gradient-check harness and alignment statistics."""
from __future__ import annotations

import numpy as np

from .model import Batch, ModelConfig, build_params
from .nn import GradReport, gradcheck
from .objective import Stage, sequence_loss

# small dimensions used by the default gradient check
GRADCHECK_DIMS = dict(feat_dim=3, maxout_pieces=2, maxout_widths=[6, 6], enc_hidden=4,
                      dec_state=5, embed_dim=3, scorer_hidden=4, gate_hidden=3,
                      head_width=4, vocab_size=5)


def random_batch(cfg: ModelConfig, n_frames: int, n_out: int, rng, batch: int = 2) -> Batch:
    """Random features and targets; the second utterance is shorter on both axes."""
    lengths = np.array([n_frames] + [max(1, n_frames - 2)] * (batch - 1))
    outs = [n_out] + [max(1, n_out - 1)] * (batch - 1)
    feats = rng.normal(size=(batch, n_frames, cfg.feat_dim))
    y_out = np.full((batch, n_out), 1)
    y_in = np.full((batch, n_out), 1)
    mask = np.zeros((batch, n_out))
    for b in range(batch):
        feats[b, lengths[b]:] = 0.0
        tgt = list(rng.integers(2, cfg.vocab_size, size=outs[b] - 1)) + [1]
        y_out[b, :outs[b]] = tgt
        y_in[b, 0] = 0
        y_in[b, 1:outs[b]] = tgt[:-1]
        mask[b, :outs[b]] = 1.0
    return Batch([f"g{b}" for b in range(batch)], feats, lengths, y_in, y_out, mask)


def full_loss_gradcheck(cfg: ModelConfig | None = None, n_frames: int = 7, n_out: int = 4,
                        seed: int = 0, eps: float = 1e-5, tol: float = 1e-4) -> GradReport:
    """Central-difference check of the complete training loss in float64.

    Gating, the monotonicity penalty and both weight-decay groups are on, and
    biases and the gate are perturbed away from their initial values so every
    path carries gradient.
    """
    cfg = cfg or ModelConfig(**GRADCHECK_DIMS)
    rng = np.random.default_rng(seed)
    ps = build_params(cfg, rng, np.float64)
    for n in ps:
        if n.rsplit(".", 1)[1] in ("b", "bz", "br", "c") or n.startswith(("attention.gate", "decoder.s0")):
            ps[n] = ps[n] + rng.normal(size=ps[n].shape) * 0.3
    batch = random_batch(cfg, n_frames, n_out, rng)
    stage = Stage(1, gating_enabled=True, penalty_enabled=True, wd_output_mlp=1e-3, wd_scorer=2e-4)

    def loss(p):
        lb, grads = sequence_loss(p, batch, stage)
        return lb.total, grads

    names = [n for n in ps if not n.startswith("encoder.pretrain")]
    return gradcheck(loss, ps, eps=eps, tol=tol, names=names)


# ---------------------------------------------------------------------------
# alignment statistics


def argmax_path(rows) -> np.ndarray:
    return np.argmax(np.asarray(rows), axis=1)


def backward_moves(rows, jump: int = 2) -> tuple[int, int]:
    """(steps whose argmax moves back by more than ``jump``, transitions)."""
    path = argmax_path(rows)
    if path.size < 2:
        return 0, 0
    return int(np.sum(np.diff(path) < -jump)), path.size - 1


def backward_move_fraction(alignments, jump: int = 2) -> float:
    moved = total = 0
    for rows in alignments:
        m, t = backward_moves(rows, jump)
        moved += m
        total += t
    return moved / total if total else 0.0


def count_modes(row, rel: float = 0.5, sep: int = 2) -> int:
    """Local maxima of at least ``rel`` times the row maximum, more than
    ``sep`` positions apart."""
    row = np.asarray(row)
    padded = np.concatenate([[-np.inf], row, [-np.inf]])
    peaks = [i for i in range(row.size)
             if padded[i + 1] >= padded[i] and padded[i + 1] > padded[i + 2]
             and row[i] >= rel * row.max()]
    kept = []
    for i in sorted(peaks, key=lambda i: -row[i]):
        if all(abs(i - j) > sep for j in kept):
            kept.append(i)
    return len(kept)


def multimodal_rows(alignments, rel: float = 0.5, sep: int = 2) -> int:
    return sum(count_modes(r, rel, sep) > 1 for rows in alignments for r in rows)
