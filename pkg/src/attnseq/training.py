"""Length-bucketed minibatching and the staged training loop."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .encoder import MAXOUT, PRETRAIN, framewise_loss
from .metrics import corpus_error_rate
from .model import Model, build_params, collate, init_gate
from .nn import ConfigError, NumericError
from .objective import LossBreakdown, sequence_loss
from .optim import AdaDelta, ClipState, adaptive_clip
from .search import greedy_decode
from .vocab import Vocabulary

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
LAST, BEST, FAILED = "last.ckpt", "best.ckpt", "failed.ckpt"

# numpy Generator seeds: (seed, PURPOSE, epoch)
_INIT, _SHUFFLE_PRE, _SHUFFLE, _GATE = 0, 1, 2, 3


def make_batches(dataset, rng: np.random.Generator, group_size: int = 32,
                 batch_size: int = 4) -> list[list]:
    """Shuffle, cut into groups, sort each group by frame count, then batch.

    Batches never straddle a group, so the last batch of a group may be
    smaller than ``batch_size``.
    """
    order = rng.permutation(len(dataset))
    batches = []
    for g0 in range(0, len(order), group_size):
        group = sorted(order[g0:g0 + group_size].tolist(),
                       key=lambda i: dataset[i].features.shape[0])
        for b0 in range(0, len(group), batch_size):
            batches.append([dataset[i] for i in group[b0:b0 + batch_size]])
    return batches


def dtype_of(cfg: ExperimentConfig):
    return np.float32 if cfg.precision == "f32" else np.float64


def effective_config(cfg: ExperimentConfig, vocab: Vocabulary) -> ExperimentConfig:
    """Resolve the vocabulary-dependent model sizes."""
    model = replace(cfg.model, vocab_size=len(vocab),
                    frame_classes=len(vocab.content) if cfg.schedule.pretrain_epochs else 0)
    out = replace(cfg, model=model)
    out.validate()
    return out


def fresh_checkpoint(cfg: ExperimentConfig, vocab: Vocabulary) -> Checkpoint:
    cfg = effective_config(cfg, vocab)
    rng = np.random.default_rng([cfg.seed, _INIT])
    params = build_params(cfg.model, rng, dtype_of(cfg))
    state = {"phase": "pretrain" if cfg.schedule.pretrain_epochs else "sequence",
             "epoch": 0, "pretrain_epoch": 0, "gating": False, "gate_initialized": False,
             "best_dev_ser": None, "best_epoch": None}
    # run locations are not part of the experiment; leaving them out keeps
    # checkpoints of identical runs byte-identical wherever they are written
    config = {k: v for k, v in cfg.to_dict().items() if k != "paths"}
    return Checkpoint(config, vocab.content, params, None, None, state, {})


def dev_error_rate(model: Model, dev) -> dict:
    refs = {u.id: list(u.target) for u in dev}
    hyps = {u.id: model.vocab.decode(greedy_decode(model, u.features).tokens) for u in dev}
    return corpus_error_rate(refs, hyps).as_dict()


class MetricsLog:
    def __init__(self, path: Path):
        self.path = path

    def append(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _snapshot(record: dict) -> dict:
    return {k: v for k, v in record.items() if k != "wallclock"}


def _mean_breakdown(items: list[LossBreakdown]) -> dict:
    keys = ("nll", "penalty", "decay_output_mlp", "decay_scorer")
    out = {k: float(np.mean([getattr(b, k) for b in items])) for k in keys}
    out["total"] = sum(out[k] for k in keys)
    return out


class Trainer:
    """Runs (or resumes) the pretraining phase and the staged schedule.

    Checkpoints go to ``out_dir``: ``last.ckpt`` after every epoch and
    ``best.ckpt`` whenever the dev error rate strictly improves.  Each epoch
    appends one JSON record to ``metrics.jsonl``.
    """

    def __init__(self, cfg: ExperimentConfig, train, dev, vocab: Vocabulary, out_dir,
                 resume: bool = False):
        self.train_set, self.dev_set = list(train), list(dev)
        if not self.train_set:
            raise ConfigError("training set is empty")
        self.vocab = vocab
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.metrics = MetricsLog(self.out / METRICS_FILE)
        if resume:
            self.ck = load_checkpoint(self.out / LAST)
            if self.ck.vocab != vocab.content:
                raise ConfigError("vocabulary differs from the checkpoint being resumed")
            self.cfg = ExperimentConfig.from_dict(self.ck.config)
            self.metrics.append({"event": "resume", "config": self.ck.config,
                                 "state": self.ck.state})
        else:
            self.ck = fresh_checkpoint(cfg, vocab)
            self.cfg = ExperimentConfig.from_dict(self.ck.config)
            self.metrics.append({"event": "start", "config": {**self.ck.config,
                                                              "paths": asdict(cfg.paths)},
                                 "n_params": self.ck.params.n_scalars(),
                                 "n_train": len(self.train_set), "n_dev": len(self.dev_set)})
        if self.cfg.schedule.pretrain_epochs and any(u.frame_labels is None for u in self.train_set):
            raise ConfigError("pretraining is enabled but training utterances lack frame_labels")
        self.dtype = dtype_of(self.cfg)

    # -- helpers ----------------------------------------------------------------

    @property
    def params(self):
        return self.ck.params

    @property
    def state(self) -> dict:
        return self.ck.state

    def _new_optimizer(self, grad_scale: float = 1.0) -> None:
        o = self.cfg.optimizer
        self.ck.adadelta = AdaDelta(rho=o.rho_ad, eps=o.eps_ad)
        self.ck.clip = ClipState(rho_clip=o.rho_clip, kappa=o.kappa, grad_scale=grad_scale)

    def _update(self, grads) -> bool:
        trainable = {n: grads[n] for n in self.params.trainable_names()}
        g, info = adaptive_clip(trainable, self.ck.clip)
        self.ck.adadelta.step(self.params, g)
        return info["clipped"]

    def _fail(self, exc: Exception, where: dict) -> None:
        self.state["failure"] = str(exc)
        save_checkpoint(self.ck, self.out / FAILED)
        self.metrics.append({"event": "numeric_failure", "error": str(exc), **where})
        log.error("numeric failure (%s); state dumped to %s", exc, self.out / FAILED)

    # -- phases -----------------------------------------------------------------

    def run(self) -> Checkpoint:
        sched = self.cfg.schedule
        if self.state["phase"] == "pretrain":
            while self.state["pretrain_epoch"] < sched.pretrain_epochs:
                self.pretrain_epoch(self.state["pretrain_epoch"] + 1)
            self._begin_sequence_phase()
        while self.state["epoch"] < sched.n_epochs:
            self.sequence_epoch(self.state["epoch"] + 1)
        return self.ck

    def pretrain_epoch(self, k: int) -> None:
        t0 = time.perf_counter()
        ps = self.params
        if self.ck.adadelta is None:
            for n in ps:
                ps.entry(n).trainable = n.startswith((MAXOUT, PRETRAIN))
            self._new_optimizer()
        rng = np.random.default_rng([self.cfg.seed, _SHUFFLE_PRE, k])
        losses, clipped = [], 0
        for utts in make_batches(self.train_set, rng, self.cfg.batch.group_size,
                                 self.cfg.batch.batch_size):
            b = collate(utts, self.vocab, self.dtype)
            try:
                loss, grads = framewise_loss(ps, b.feats, b.frame_labels)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite framewise loss {loss}")
            except NumericError as exc:
                self._fail(exc, {"phase": "pretrain", "epoch": k})
                raise
            clipped += self._update(grads)
            losses.append(loss)
        self.state["pretrain_epoch"] = k
        rec = {"phase": "pretrain", "epoch": k, "frame_loss": float(np.mean(losses)),
               "clipped_steps": clipped, "wallclock": time.perf_counter() - t0}
        self.ck.metrics = _snapshot(rec)
        save_checkpoint(self.ck, self.out / LAST)
        self.metrics.append(rec)
        log.info("pretrain epoch %d: frame loss %.4f", k, rec["frame_loss"])

    def _begin_sequence_phase(self) -> None:
        ps = self.params
        for n in ps:
            ps.entry(n).trainable = not n.startswith(PRETRAIN)
        self.state["phase"] = "sequence"
        self.ck.adadelta = None

    def sequence_epoch(self, epoch: int) -> None:
        t0 = time.perf_counter()
        sched, ps = self.cfg.schedule, self.params
        if self.state["phase"] == "pretrain":  # no pretraining configured on resume
            self._begin_sequence_phase()
        k = sched.stage_index(epoch)
        stage = sched.stages[k]
        if self.ck.adadelta is None:
            self._new_optimizer()
        self.ck.clip.grad_scale = stage.grad_scale
        ps.set_trainable(MAXOUT, not stage.freeze_encoder_ff)
        if stage.gating_enabled and not self.state["gate_initialized"]:
            init_gate(ps, np.random.default_rng([self.cfg.seed, _GATE, epoch]))
            self.state["gate_initialized"] = True
        self.state["gating"] = stage.gating_enabled

        rng = np.random.default_rng([self.cfg.seed, _SHUFFLE, epoch])
        parts, clipped = [], 0
        for utts in make_batches(self.train_set, rng, self.cfg.batch.group_size,
                                 self.cfg.batch.batch_size):
            b = collate(utts, self.vocab, self.dtype)
            try:
                lb, grads = sequence_loss(ps, b, stage)
            except NumericError as exc:
                self._fail(exc, {"phase": "sequence", "epoch": epoch, "batch": b.ids})
                raise
            clipped += self._update(grads)
            parts.append(lb)
        self.state["epoch"] = epoch

        dev = dev_error_rate(self.ck.model(), self.dev_set) if self.dev_set else None
        ser = None if dev is None else dev["error_rate"]
        best = self.state["best_dev_ser"]
        improved = ser is not None and (best is None or ser < best)
        if improved:
            self.state["best_dev_ser"], self.state["best_epoch"] = ser, epoch
        rec = {"phase": "sequence", "epoch": epoch, "stage": k,
               "gating": stage.gating_enabled, "penalty": stage.penalty_enabled,
               "freeze_encoder_ff": stage.freeze_encoder_ff, "grad_scale": stage.grad_scale,
               "train_loss": _mean_breakdown(parts), "clipped_steps": clipped,
               "dev_ser": ser, "dev": dev, "best": improved,
               "wallclock": time.perf_counter() - t0}
        self.ck.metrics = _snapshot(rec)
        if improved:
            save_checkpoint(self.ck, self.out / BEST)
        save_checkpoint(self.ck, self.out / LAST)
        self.metrics.append(rec)
        log.info("epoch %d (stage %d): loss %.4f  dev SER %s%s", epoch, k,
                 rec["train_loss"]["total"], "n/a" if ser is None else f"{ser:.4f}",
                 "  *" if improved else "")


def train(cfg: ExperimentConfig, train_set, dev_set, vocab: Vocabulary, out_dir,
          resume: bool = False) -> Checkpoint:
    return Trainer(cfg, train_set, dev_set, vocab, out_dir, resume).run()
