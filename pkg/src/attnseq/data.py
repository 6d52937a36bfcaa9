"""Synthetic pseudo-speech corpora, dataset files and label maps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import ConfigError
from .rng import Stream
from .vocab import Vocabulary

MANIFEST = "manifest.json"
PROTO_STREAM = 0


class DataError(ValueError):
    """A dataset, vocabulary or label-map file is malformed."""


@dataclass
class SynthSpec:
    vocab_size: int = 12
    feature_dim: int = 8
    len_range: list = field(default_factory=lambda: [4, 10])
    duration_range: list = field(default_factory=lambda: [2, 6])
    noise_sigma: float = 0.1
    repeat_prob: float = 0.5
    seed: int = 1234

    def validate(self) -> None:
        lo, hi = self.len_range
        dlo, dhi = self.duration_range
        if self.vocab_size < 1 or self.feature_dim < 1:
            raise ConfigError("vocab_size and feature_dim must be positive")
        if not 1 <= lo <= hi or not 1 <= dlo <= dhi:
            raise ConfigError("len_range and duration_range need 1 <= min <= max")
        if self.noise_sigma < 0 or not 0.0 <= self.repeat_prob <= 1.0:
            raise ConfigError("noise_sigma must be >= 0 and repeat_prob in [0, 1]")

    def symbols(self) -> list[str]:
        return [f"s{i:02d}" for i in range(self.vocab_size)]

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.symbols())

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Utterance:
    id: str
    features: np.ndarray            # (n_frames, feature_dim) float32
    target: list                    # content symbols, no EOS
    frame_labels: list | None = None

    def __eq__(self, other) -> bool:
        return (isinstance(other, Utterance) and self.id == other.id
                and self.target == other.target
                and self.frame_labels == other.frame_labels
                and self.features.dtype == other.features.dtype
                and np.array_equal(self.features, other.features))


def prototypes(spec: SynthSpec) -> np.ndarray:
    """One fixed vector per symbol, standard normal scaled by 1/sqrt(F)."""
    st = Stream.derive(spec.seed, PROTO_STREAM)
    V, F = spec.vocab_size, spec.feature_dim
    return (st.normal(V * F).reshape(V, F) / np.sqrt(F)).astype(np.float32)


def _symbol_sequence(st: Stream, spec: SynthSpec) -> list[int]:
    V = spec.vocab_size
    n = st.integer(*spec.len_range)
    repeat = st.uniform(1)[0] < spec.repeat_prob and n >= 2
    rep_pos = -1
    if repeat:
        rep_pos = 1 if n == 2 else st.integer(2, n - 1)
    seq: list[int] = []
    for j in range(n):
        if j == rep_pos:
            if n == 2:
                seq.append(seq[0])
                continue
            # earlier symbols that are not adjacent and differ from the neighbour
            cands = [seq[k] for k in range(j - 1) if seq[k] != seq[j - 1]]
            seq.append(cands[st.integer(0, len(cands) - 1)])
        elif j == 0 or V == 1:
            seq.append(st.integer(0, V - 1))
        else:
            s = st.integer(0, V - 2)
            seq.append(s + 1 if s >= seq[-1] else s)
    return seq


def synth_generate(spec: SynthSpec, n_utterances: int, split: int = 0,
                   prefix: str = "utt") -> list[Utterance]:
    """Generate ``n_utterances`` pseudo-speech utterances.

    Symbols never repeat back-to-back (except the forced repeat of a
    two-symbol sequence), so segment boundaries stay observable.  Each
    symbol spans a uniform number of frames of its prototype plus Gaussian
    noise.  Utterance ``i`` of ``split`` draws from its own stream.
    """
    spec.validate()
    proto = prototypes(spec)
    names = spec.symbols()
    out = []
    for i in range(n_utterances):
        st = Stream.derive(spec.seed, split + 1, i)
        seq = _symbol_sequence(st, spec)
        durs = st.integers(*spec.duration_range, len(seq))
        labels = np.repeat(np.array(seq, dtype=np.int64), durs)
        noise = st.normal(labels.size * spec.feature_dim).reshape(labels.size, -1)
        feats = proto[labels] + (spec.noise_sigma * noise).astype(np.float32)
        out.append(Utterance(f"{prefix}{split}_{i:06d}", feats.astype(np.float32),
                             [names[s] for s in seq], labels.tolist()))
    return out


# ---------------------------------------------------------------------------
# dataset directories


def save_dataset(utts: list[Utterance], directory) -> None:
    d = Path(directory)
    (d / "feats").mkdir(parents=True, exist_ok=True)
    manifest = []
    for u in utts:
        rel = f"feats/{u.id}.f32"
        arr = np.ascontiguousarray(u.features, dtype="<f4")
        (d / rel).write_bytes(arr.tobytes())
        entry = {"id": u.id, "n_frames": int(arr.shape[0]),
                 "feature_dim": int(arr.shape[1]), "target": list(u.target),
                 "feature_file": rel}
        if u.frame_labels is not None:
            entry["frame_labels"] = [int(v) for v in u.frame_labels]
        manifest.append(entry)
    (d / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")


def load_dataset(directory) -> list[Utterance]:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: no {MANIFEST}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{d / MANIFEST}: malformed JSON ({exc})") from None
    if not isinstance(manifest, list):
        raise DataError(f"{d / MANIFEST}: expected a list of utterances")
    utts = []
    for k, e in enumerate(manifest):
        uid = e.get("id", f"#{k}") if isinstance(e, dict) else f"#{k}"
        try:
            n, F = int(e["n_frames"]), int(e["feature_dim"])
            target = [str(s) for s in e["target"]]
            blob = (d / e["feature_file"]).read_bytes()
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise DataError(f"utterance {uid}: bad manifest entry ({exc})") from None
        if len(blob) != n * F * 4:
            raise DataError(
                f"utterance {uid}: feature blob has {len(blob)} bytes, "
                f"expected {n * F * 4} ({n} frames x {F} dims x 4)")
        feats = np.frombuffer(blob, dtype="<f4").reshape(n, F).astype(np.float32)
        labels = e.get("frame_labels")
        if labels is not None and len(labels) != n:
            raise DataError(f"utterance {uid}: {len(labels)} frame labels for {n} frames")
        utts.append(Utterance(uid, feats, target,
                              None if labels is None else [int(v) for v in labels]))
    return utts


# ---------------------------------------------------------------------------
# label maps


def load_label_map(path) -> dict[str, str]:
    mapping = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{ln}: expected 'from<TAB>to'")
        mapping[parts[0]] = parts[1]
    return mapping


def map_labels(tokens, mapping: dict[str, str]) -> list[str]:
    """Many-to-one symbol substitution; no merging of repeats."""
    try:
        return [mapping[t] for t in tokens]
    except KeyError as exc:
        raise DataError(f"symbol {exc.args[0]!r} missing from label map") from None
