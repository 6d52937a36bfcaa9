"""Model configuration, parameter construction and padded batches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from . import decoder as dec
from . import encoder as enc
from .nn import GATE_NAMES, ConfigError, ParamStore, glorot, orthonormal_init
from .vocab import Vocabulary


@dataclass
class ModelConfig:
    feat_dim: int = 8
    maxout_pieces: int = 2
    maxout_widths: list = field(default_factory=lambda: [64, 64])
    enc_hidden: int = 48
    dec_state: int = 64
    embed_dim: int = 16
    scorer_hidden: int = 48
    gate_hidden: int = 10
    head_width: int = 64
    head_pieces: int = 2
    vocab_size: int = 14
    frame_classes: int = 0

    def validate(self) -> None:
        if self.maxout_pieces < 2 or self.head_pieces < 2:
            raise ConfigError("maxout layers need at least 2 pieces")
        if not self.maxout_widths:
            raise ConfigError("maxout_widths must list at least one layer")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size counts BOS and EOS, so it must be >= 3")
        for name in ("feat_dim", "enc_hidden", "dec_state", "embed_dim",
                     "scorer_hidden", "gate_hidden", "head_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


def _add_gated(ps: ParamStore, prefix: str, D: int, H: int, rng) -> None:
    for gate in ("z", "r", ""):
        ps.add(f"{prefix}.W{gate}", glorot(rng, (H, D), D, H))
        ps.add(f"{prefix}.U{gate}", orthonormal_init(H, rng))
        ps.add(f"{prefix}.b{gate}", np.zeros(H))
    assert all(f"{prefix}.{k}" in ps for k in GATE_NAMES)


def init_gate(ps: ParamStore, rng: np.random.Generator) -> None:
    """Gate hidden weights constant 1e-3, hidden biases uniform in (-5, 5)."""
    G = ps[f"{att.GATE}.w"].shape[0]
    ps[f"{att.GATE}.w"] = np.full(G, 1e-3)
    ps[f"{att.GATE}.b"] = rng.uniform(-5.0, 5.0, G)
    ps[f"{att.GATE}.v"] = rng.standard_normal(G) / np.sqrt(G)
    ps[f"{att.GATE}.c"] = np.zeros(())


def build_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> ParamStore:
    cfg.validate()
    ps = ParamStore(dtype)
    n = cfg.feat_dim
    for i, m in enumerate(cfg.maxout_widths):
        k = cfg.maxout_pieces
        ps.add(f"{enc.MAXOUT}.{i}.W", glorot(rng, (k, m, n), n, m))
        ps.add(f"{enc.MAXOUT}.{i}.b", np.zeros((k, m)))
        n = m
    if cfg.frame_classes:
        C = cfg.frame_classes
        ps.add(f"{enc.PRETRAIN}.W", glorot(rng, (C, n), n, C))
        ps.add(f"{enc.PRETRAIN}.b", np.zeros(C))
    H = cfg.enc_hidden
    _add_gated(ps, enc.FWD, n, H, rng)
    _add_gated(ps, enc.BWD, n, H, rng)

    A, S, E = cfg.scorer_hidden, cfg.dec_state, cfg.embed_dim
    ps.add(f"{att.SCORER}.Ws", glorot(rng, (A, S), S, A), decay_group="scorer")
    ps.add(f"{att.SCORER}.Wh", glorot(rng, (A, 2 * H), 2 * H, A), decay_group="scorer")
    ps.add(f"{att.SCORER}.b", np.zeros(A))
    ps.add(f"{att.SCORER}.v", glorot(rng, (A,), A, 1), decay_group="scorer")
    G = cfg.gate_hidden
    for name in ("w", "b", "v"):
        ps.add(f"{att.GATE}.{name}", np.zeros(G))
    ps.add(f"{att.GATE}.c", np.zeros(()))
    init_gate(ps, rng)

    V = cfg.vocab_size
    ps.add(dec.EMBED, rng.standard_normal((V, E)) / np.sqrt(E))
    _add_gated(ps, dec.F, E + 2 * H, S, rng)
    q = E + S + 2 * H
    M, k = cfg.head_width, cfg.head_pieces
    ps.add(f"{dec.G_MAXOUT}.W", glorot(rng, (k, M, q), q, M), decay_group="output_mlp")
    ps.add(f"{dec.G_MAXOUT}.b", np.zeros((k, M)))
    ps.add(f"{dec.G_OUT}.W", glorot(rng, (V, M), M, V), decay_group="output_mlp")
    ps.add(f"{dec.G_OUT}.b", np.zeros(V))
    ps.add(dec.S0, np.zeros(S))
    return ps


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    ids: list
    feats: np.ndarray        # (B, T, F) zero padded
    lengths: np.ndarray      # (B,) frame counts before the terminal frame
    y_in: np.ndarray         # (B, O) BOS-shifted targets
    y_out: np.ndarray        # (B, O) targets ending in EOS
    out_mask: np.ndarray     # (B, O) 1.0 on real target positions
    frame_labels: np.ndarray | None = None  # (B, T), -1 padded

    def __len__(self) -> int:
        return len(self.ids)


def collate(utts, vocab: Vocabulary, dtype=np.float64) -> Batch:
    """Pad a list of utterances into one batch (targets get EOS appended)."""
    B = len(utts)
    T = max(u.features.shape[0] for u in utts)
    Fdim = utts[0].features.shape[1]
    targets = [vocab.encode(u.target) + [vocab.eos] for u in utts]
    O = max(len(t) for t in targets)
    feats = np.zeros((B, T, Fdim), dtype=dtype)
    y_out = np.full((B, O), vocab.eos, dtype=np.int64)
    y_in = np.full((B, O), vocab.eos, dtype=np.int64)
    out_mask = np.zeros((B, O), dtype=dtype)
    labels = np.full((B, T), -1, dtype=np.int64)
    have_labels = all(u.frame_labels is not None for u in utts)
    for b, (u, t) in enumerate(zip(utts, targets)):
        n = u.features.shape[0]
        feats[b, :n] = u.features
        y_out[b, :len(t)] = t
        y_in[b, 0] = vocab.bos
        y_in[b, 1:len(t)] = t[:-1]
        out_mask[b, :len(t)] = 1.0
        if have_labels:
            labels[b, :n] = u.frame_labels
    return Batch([u.id for u in utts], feats,
                 np.array([u.features.shape[0] for u in utts], dtype=np.int64),
                 y_in, y_out, out_mask, labels if have_labels else None)


@dataclass
class Model:
    """Parameters plus what decoding needs to know about them."""

    cfg: ModelConfig
    params: ParamStore
    vocab: Vocabulary
    gating: bool = False
