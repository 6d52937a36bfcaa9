"""Single-file checkpoints.

Layout::

    8 bytes   magic  b"ATSQCKPT"
    8 bytes   little-endian uint64 header length N
    N bytes   UTF-8 JSON header (sorted keys, compact separators)
    ...       raw tensor blob

The header holds the format version, the effective experiment config, the
vocabulary, a tensor index ``{name, shape, dtype, offset}`` into the blob,
optimizer scalars, training state and a metrics snapshot.  Tensors are
stored little-endian and C-ordered, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build_params
from .nn import ConfigError, ParamStore
from .optim import AdaDelta, ClipState
from .vocab import Vocabulary

MAGIC = b"ATSQCKPT"
FORMAT_VERSION = 1


class CheckpointError(ConfigError):
    """The file is not a readable checkpoint or does not fit its config."""


@dataclass
class Checkpoint:
    config: dict                       # effective ExperimentConfig as a dict
    vocab: list                        # content symbols
    params: ParamStore
    adadelta: AdaDelta | None = None
    clip: ClipState | None = None
    state: dict = field(default_factory=dict)    # epoch, phase, best dev SER, ...
    metrics: dict = field(default_factory=dict)  # last metrics record, no wallclock

    def model(self) -> Model:
        cfg = ModelConfig(**self.config["model"])
        return Model(cfg, self.params, Vocabulary(self.vocab),
                     gating=bool(self.state.get("gating", False)))


def _tensors(ck: Checkpoint):
    for name in ck.params:
        yield f"param/{name}", ck.params[name]
    if ck.adadelta is not None:
        for name in ck.params:
            if name in ck.adadelta.Eg2:
                yield f"adadelta.Eg2/{name}", ck.adadelta.Eg2[name]
                yield f"adadelta.Edx2/{name}", ck.adadelta.Edx2[name]


def to_bytes(ck: Checkpoint) -> bytes:
    index, chunks, offset = [], [], 0
    for key, arr in _tensors(ck):
        arr = np.asarray(arr)
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entry = {"name": key, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                 "offset": offset}
        if key.startswith("param/"):
            p = ck.params.entry(key[6:])
            entry["trainable"] = p.trainable
            entry["decay_group"] = p.decay_group
        index.append(entry)
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ck.config,
        "vocab": list(ck.vocab),
        "tensors": index,
        "optimizer": None if ck.adadelta is None else {
            "rho": ck.adadelta.rho, "eps": ck.adadelta.eps,
            "clip": None if ck.clip is None else asdict(ck.clip)},
        "state": ck.state,
        "metrics": ck.metrics,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)


def from_bytes(raw: bytes, where: str = "checkpoint") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{where}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{where}: truncated header")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{where}: corrupt header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{where}: unsupported format version {header.get('format_version')}")
    blob = memoryview(raw)[16 + n:]

    dtypes = {e["dtype"] for e in header["tensors"] if e["name"].startswith("param/")}
    if len(dtypes) != 1:
        raise CheckpointError(f"{where}: parameters have mixed dtypes {sorted(dtypes)}")
    params = ParamStore(np.dtype(dtypes.pop()).newbyteorder("="))
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = AdaDelta(rho=o["rho"], eps=o["eps"])
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * dt.itemsize
        if end > len(blob):
            raise CheckpointError(f"{where}: tensor {e['name']} runs past the end of the file")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=dt).reshape(e["shape"])
        arr = arr.astype(dt.newbyteorder("="))
        kind, name = e["name"].split("/", 1)
        if kind == "param":
            params.add(name, arr, trainable=e["trainable"], decay_group=e["decay_group"])
        elif kind == "adadelta.Eg2" and opt is not None:
            opt.Eg2[name] = arr
        elif kind == "adadelta.Edx2" and opt is not None:
            opt.Edx2[name] = arr
        else:
            raise CheckpointError(f"{where}: unexpected tensor {e['name']}")
    clip = None
    if header["optimizer"] is not None and header["optimizer"]["clip"] is not None:
        clip = ClipState(**header["optimizer"]["clip"])
    ck = Checkpoint(header["config"], header["vocab"], params, opt, clip,
                    header["state"], header["metrics"])
    check_dimensions(ck, where)
    return ck


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(raw, str(path))


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    ps = build_params(cfg, np.random.default_rng(0))
    return {n: ps[n].shape for n in ps}


def check_dimensions(ck: Checkpoint, where: str = "checkpoint",
                     cfg: ModelConfig | None = None) -> None:
    """Every stored tensor must have exactly the shape ``cfg`` implies."""
    try:
        cfg = cfg or ModelConfig(**ck.config["model"])
        want = expected_shapes(cfg)
    except (TypeError, KeyError) as exc:
        raise CheckpointError(f"{where}: bad model config ({exc})") from None
    have = {n: ck.params[n].shape for n in ck.params}
    if set(want) != set(have):
        diff = sorted(set(want) ^ set(have))
        raise CheckpointError(f"{where}: tensor set differs from the model config: {diff[:5]}")
    for n, shape in want.items():
        if have[n] != shape:
            raise CheckpointError(f"{where}: tensor {n} has shape {have[n]}, config implies {shape}")
    if cfg.vocab_size != len(ck.vocab) + 2:
        raise CheckpointError(f"{where}: vocabulary has {len(ck.vocab)} content symbols, "
                              f"config expects {cfg.vocab_size - 2}")
