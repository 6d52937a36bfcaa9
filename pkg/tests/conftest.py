import sys

import numpy as np
import pytest

from attnseq.model import Batch, ModelConfig, build_params


def tiny_config(**kw) -> ModelConfig:
    base = dict(feat_dim=3, maxout_widths=[6, 6], enc_hidden=4, dec_state=5, embed_dim=3,
                scorer_hidden=4, gate_hidden=3, head_width=4, vocab_size=5)
    base.update(kw)
    return ModelConfig(**base)


def roughen(ps, rng, scale=0.3):
    """Give biases and the gate non-trivial values so every path is exercised."""
    for n in ps:
        last = n.rsplit(".", 1)[1]
        if last in ("b", "bz", "br", "s0", "c") or n.startswith("attention.gate"):
            ps[n] = ps[n] + rng.normal(size=ps[n].shape) * scale
    return ps


@pytest.fixture
def tiny_params():
    rng = np.random.default_rng(20)
    return roughen(build_params(tiny_config(), rng), rng)


@pytest.fixture
def tiny_batch():
    """Two utterances (7 and 5 frames), targets of 3 and 2 symbols + EOS."""
    rng = np.random.default_rng(21)
    feats = rng.normal(size=(2, 7, 3))
    feats[1, 5:] = 0.0
    y_out = np.array([[2, 3, 4, 1], [4, 2, 1, 1]])
    y_in = np.array([[0, 2, 3, 4], [0, 4, 2, 1]])
    out_mask = np.array([[1.0, 1, 1, 1], [1, 1, 1, 0]])
    return Batch(["a", "b"], feats, np.array([7, 5]), y_in, y_out, out_mask)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
