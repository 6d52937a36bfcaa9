import json

import numpy as np
import pytest

from attnseq.data import (
    DataError,
    SynthSpec,
    load_dataset,
    load_label_map,
    map_labels,
    prototypes,
    save_dataset,
    synth_generate,
)
from attnseq.model import collate
from attnseq.nn import ConfigError
from attnseq.rng import Stream
from attnseq.vocab import Vocabulary


def test_splitmix64_reference_outputs():
    # first outputs of the reference SplitMix64 generator seeded with 0
    got = [int(v) for v in Stream(0).u64(3)]
    assert got == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_stream_conversions():
    st = Stream.derive(7, 1, 2)
    u = st.uniform(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    k = Stream(3).integers(2, 6, 10000)
    assert set(k.tolist()) == {2, 3, 4, 5, 6}
    z = Stream(5).normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03
    assert Stream.derive(7, 1, 2).u64(4).tolist() == Stream.derive(7, 1, 2).u64(4).tolist()
    assert Stream.derive(7, 1, 2).u64(1)[0] != Stream.derive(7, 2, 1).u64(1)[0]


def test_noiseless_unit_duration_frames_are_prototypes():
    spec = SynthSpec(vocab_size=5, feature_dim=4, duration_range=[1, 1], noise_sigma=0.0, seed=9)
    proto = prototypes(spec)
    for u in synth_generate(spec, 20):
        assert u.features.shape[0] == len(u.target)
        idx = [int(s[1:]) for s in u.target]
        assert u.features.tobytes() == proto[idx].tobytes()
        assert u.frame_labels == idx


def test_generation_is_deterministic():
    spec = SynthSpec(seed=77)
    a, b = synth_generate(spec, 30), synth_generate(spec, 30)
    assert a == b
    assert [u.features.tobytes() for u in a] == [u.features.tobytes() for u in b]
    assert synth_generate(SynthSpec(seed=78), 1)[0] != a[0]


def test_utterance_invariants():
    spec = SynthSpec()
    for u in synth_generate(spec, 200, split=2):
        n = u.features.shape[0]
        assert u.features.dtype == np.float32 and u.features.shape[1] == 8
        assert len(u.frame_labels) == n
        assert spec.len_range[0] <= len(u.target) <= spec.len_range[1]
        assert 2 * len(u.target) <= n <= 6 * len(u.target)
        # labels are runs of the target symbols in order
        runs = [u.frame_labels[0]] + [b for a, b in zip(u.frame_labels, u.frame_labels[1:]) if a != b]
        assert [f"s{r:02d}" for r in runs] == u.target
        assert u.id.startswith("utt2_")


def test_splits_are_disjoint_streams():
    spec = SynthSpec()
    tr = synth_generate(spec, 50, split=0)
    dv = synth_generate(spec, 50, split=1)
    assert not {u.features.tobytes() for u in tr} & {u.features.tobytes() for u in dv}
    assert not {u.id for u in tr} & {u.id for u in dv}


def test_full_repeat_probability():
    spec = SynthSpec(len_range=[2, 8], repeat_prob=1.0, seed=5)
    for u in synth_generate(spec, 300):
        assert len(set(u.target)) < len(u.target), u.target


def test_no_repeats_without_repeat_probability():
    spec = SynthSpec(len_range=[2, 8], repeat_prob=0.0, seed=5)
    for u in synth_generate(spec, 300):
        assert all(a != b for a, b in zip(u.target, u.target[1:]))


def test_spec_validation():
    for bad in (dict(len_range=[0, 3]), dict(duration_range=[3, 2]),
                dict(noise_sigma=-1.0), dict(repeat_prob=1.5)):
        with pytest.raises(ConfigError):
            synth_generate(SynthSpec(**bad), 1)


# -- dataset files -----------------------------------------------------------------


def test_round_trip(tmp_path):
    utts = synth_generate(SynthSpec(), 12)
    save_dataset(utts, tmp_path)
    back = load_dataset(tmp_path)
    assert back == utts
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {"id", "n_frames", "feature_dim", "target", "frame_labels", "feature_file"} <= set(manifest[0])


def test_empty_dataset(tmp_path):
    save_dataset([], tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text()) == []
    assert load_dataset(tmp_path) == []


def test_truncated_blob(tmp_path):
    utts = synth_generate(SynthSpec(), 3)
    save_dataset(utts, tmp_path)
    blob = tmp_path / "feats" / f"{utts[1].id}.f32"
    full = blob.read_bytes()
    blob.write_bytes(full[:-6])
    with pytest.raises(DataError) as exc:
        load_dataset(tmp_path)
    msg = str(exc.value)
    assert utts[1].id in msg and str(len(full)) in msg and str(len(full) - 6) in msg


def test_malformed_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps([{"id": "u7", "n_frames": 2}]))
    with pytest.raises(DataError, match="u7"):
        load_dataset(tmp_path)


def test_collate_pads_and_terminates(tmp_path):
    spec = SynthSpec()
    utts = synth_generate(spec, 3)
    b = collate(utts, spec.vocabulary())
    vocab = spec.vocabulary()
    for i, u in enumerate(utts):
        O = len(u.target) + 1
        assert b.y_out[i, O - 1] == vocab.eos
        assert b.y_in[i, 0] == vocab.bos
        assert b.out_mask[i].sum() == O
        assert not b.feats[i, u.features.shape[0]:].any()


# -- vocabulary and label maps -----------------------------------------------------


def test_vocabulary_round_trip(tmp_path):
    v = Vocabulary(["a", "b", "c"])
    assert v.encode(["c", "a"]) == [4, 2]
    assert v.decode([2, 3]) == ["a", "b"]
    v.save(tmp_path / "vocab.txt")
    assert (tmp_path / "vocab.txt").read_text().split() == ["<s>", "</s>", "a", "b", "c"]
    assert Vocabulary.load(tmp_path / "vocab.txt") == v


def test_map_labels_identity_and_many_to_one(tmp_path):
    assert map_labels(["a", "b"], {"a": "a", "b": "b"}) == ["a", "b"]
    assert map_labels(["a", "b", "a"], {"a": "x", "b": "x"}) == ["x", "x", "x"]
    p = tmp_path / "map.tsv"
    p.write_text("a\tx\nb\tx\n")
    m = load_label_map(p)
    assert m == {"a": "x", "b": "x"}
    with pytest.raises(DataError):
        map_labels(["a", "c"], m)
    p.write_text("a x\n")
    with pytest.raises(DataError):
        load_label_map(p)
