"""Training objective: sequence NLL, monotonicity penalty, selective decay."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .decoder import unroll_backward, unroll_forward
from .encoder import MAXOUT, encoder_backward, encoder_forward
from .model import Batch
from .nn import NumericError, ParamStore


@dataclass
class Stage:
    until_epoch: int
    freeze_encoder_ff: bool = False
    gating_enabled: bool = False
    penalty_enabled: bool = False
    wd_output_mlp: float = 0.0
    wd_scorer: float = 0.0
    grad_scale: float = 1.0


@dataclass
class LossBreakdown:
    nll: float
    penalty: float
    decay_output_mlp: float
    decay_scorer: float

    @property
    def total(self) -> float:
        return self.nll + self.penalty + self.decay_output_mlp + self.decay_scorer

    def as_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def decay_terms(params: ParamStore, wd_output_mlp: float, wd_scorer: float,
                grads: dict | None = None) -> tuple[float, float]:
    """wd * 0.5 * ||W||^2 summed per decay group; adds gradients if given."""
    totals = {"output_mlp": 0.0, "scorer": 0.0}
    rates = {"output_mlp": wd_output_mlp, "scorer": wd_scorer}
    for name in params:
        group = params.entry(name).decay_group
        if group == "none" or rates[group] == 0.0:
            continue
        w = params[name]
        totals[group] += 0.5 * rates[group] * float(np.sum(w * w))
        if grads is not None:
            grads[name] += rates[group] * w
    return totals["output_mlp"], totals["scorer"]


def sequence_loss(params: ParamStore, batch: Batch, stage: Stage,
                  need_grads: bool = True):
    """Loss on a padded batch: token NLL summed per utterance and averaged
    over utterances, plus the penalty (same reduction) and weight decay.

    Returns ``(LossBreakdown, grads)``; ``grads`` is None without
    ``need_grads``.  Gradients of non-trainable tensors are zeroed.
    """
    h, mask, ecache = encoder_forward(params, batch.feats, batch.lengths)
    un = unroll_forward(params, h, mask, batch.y_in, batch.y_out, batch.out_mask,
                        stage.gating_enabled, stage.penalty_enabled)
    B = len(batch)
    nll = -float(un.loglik.sum()) / B
    pen = float(un.penalty.sum()) / B if stage.penalty_enabled else 0.0
    grads = params.zero_grads() if need_grads else None
    d_out, d_sc = decay_terms(params, stage.wd_output_mlp, stage.wd_scorer, grads)
    lb = LossBreakdown(nll, pen, d_out, d_sc)
    if not np.isfinite(lb.total):
        bad = [n for n in params if not np.all(np.isfinite(params[n]))]
        raise NumericError(f"non-finite loss {lb.as_dict()}; non-finite parameters: {bad}")
    if not need_grads:
        return lb, None
    w = np.full(B, 1.0 / B)
    dh = unroll_backward(params, un, h, mask, batch.y_out, batch.out_mask, w,
                         w if stage.penalty_enabled else 0.0 * w, grads)
    frozen_ff = stage.freeze_encoder_ff or not params.entry(f"{MAXOUT}.0.W").trainable
    encoder_backward(dh, ecache, params, grads, freeze_ff=frozen_ff)
    for name in params:
        if not params.entry(name).trainable:
            grads[name][...] = 0.0
    return lb, grads
