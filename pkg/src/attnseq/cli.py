"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .attention import GATE, gate_shape_dump
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, from_mapping
from .data import DataError, SynthSpec, load_dataset, load_label_map, map_labels, save_dataset, synth_generate
from .diagnostics import GRADCHECK_DIMS, full_loss_gradcheck
from .metrics import corpus_error_rate
from .model import ModelConfig
from .nn import ConfigError, ContractError, NumericError
from .search import beam_decode, dump_alignment, greedy_decode
from .training import BEST, LAST, METRICS_FILE, Trainer
from .vocab import Vocabulary

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "dev", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.spec:
        try:
            spec = from_mapping(SynthSpec, json.loads(Path(args.spec).read_text()), "synth spec")
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synth spec {args.spec}: {exc}") from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    spec.validate()
    out = Path(args.out)
    _prepare_out(out, args.force)
    spec.vocabulary().save(out / "vocab.txt")
    _write_json(out / "synth_spec.json", spec.as_dict())
    for split, (name, n) in enumerate(zip(SPLITS, (args.n_train, args.n_dev, args.n_test))):
        save_dataset(synth_generate(spec, n, split=split), out / name)
        print(f"{name}: {n} utterances -> {out / name}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    paths = cfg.paths
    paths = replace(paths, **{k: v for k, v in (("train", args.train), ("dev", args.dev),
                                                 ("vocab", args.vocab), ("out", args.out)) if v})
    cfg = replace(cfg, paths=paths)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.precision:
        cfg = replace(cfg, precision=args.precision)
    cfg.validate()
    out = Path(paths.out)
    stale = []
    if not args.resume:
        existing = [p for p in (LAST, BEST, METRICS_FILE) if (out / p).exists()]
        if existing and not args.force:
            raise UsageError(f"{out} already holds a run ({', '.join(existing)}); "
                             "use --resume or --force")
        if existing:
            stale = existing
    elif not (out / LAST).exists():
        raise UsageError(f"nothing to resume: {out / LAST} does not exist")
    vocab = Vocabulary.load(paths.vocab)
    train_set = load_dataset(paths.train)
    dev_set = load_dataset(paths.dev) if paths.dev else []
    for u in train_set + dev_set:
        unknown = set(u.target) - set(vocab.content)
        if unknown:
            raise DataError(f"utterance {u.id}: symbols {sorted(unknown)} not in {paths.vocab}")
    for p in stale:
        (out / p).unlink()
    t = Trainer(cfg, train_set, dev_set, vocab, out, resume=args.resume)
    ck = t.run()
    print(json.dumps({"epoch": ck.state["epoch"], "best_dev_ser": ck.state["best_dev_ser"],
                      "best_epoch": ck.state["best_epoch"], "out": str(out)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# decode


def cmd_decode(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = ck.model()
    if args.precision:
        model.params = model.params.astype(np.float32 if args.precision == "f32" else np.float64)
    utts = load_dataset(args.data)
    for u in utts:
        unknown = set(u.target) - set(model.vocab.content)
        if unknown:
            raise DataError(f"utterance {u.id}: symbols {sorted(unknown)} are not in the "
                            "checkpoint vocabulary")
        if u.features.shape[1] != model.cfg.feat_dim:
            raise DataError(f"utterance {u.id}: feature dim {u.features.shape[1]}, "
                            f"model expects {model.cfg.feat_dim}")
    width = 1 if args.greedy else args.beam
    if args.greedy and args.nbest > 1:
        raise UsageError("--nbest needs beam search")
    align_dir = Path(args.dump_alignments) if args.dump_alignments else None
    if align_dir:
        align_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utts:
        if args.greedy:
            hyps = [greedy_decode(model, u.features)]
        else:
            hyps = beam_decode(model, u.features, width=width, n_best=args.nbest).hypotheses
        lines.append(json.dumps({"id": u.id, "hypotheses": [
            {"tokens": model.vocab.decode(h.tokens), "log_prob": h.log_prob,
             "finished": h.finished} for h in hyps]}))
        if align_dir:
            best = hyps[0]
            rows = dump_alignment(model, u.features, best.tokens, finished=best.finished)
            _write_json(align_dir / f"{u.id}.json",
                        {"id": u.id, "tokens": model.vocab.decode(best.tokens),
                         "rows": rows.tolist()})
    text = "".join(ln + "\n" for ln in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def read_hypotheses(path) -> dict:
    hyps = {}
    try:
        for line in Path(path).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                hyps[rec["id"]] = list(rec["hypotheses"][0]["tokens"])
    except (OSError, json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise DataError(f"{path}: unreadable hypothesis file ({exc})") from None
    return hyps


def cmd_eval(args) -> int:
    refs = {u.id: list(u.target) for u in load_dataset(args.ref)}
    hyps = read_hypotheses(args.hyp)
    if set(refs) != set(hyps):
        raise DataError(f"hypothesis ids do not match the reference set "
                        f"({len(set(refs) ^ set(hyps))} differ)")
    if args.map:
        m = load_label_map(args.map)
        refs = {k: map_labels(v, m) for k, v in refs.items()}
        hyps = {k: map_labels(v, m) for k, v in hyps.items()}
    report = corpus_error_rate(refs, hyps).as_dict()
    report["utterances"] = len(refs)
    print(json.dumps(report, sort_keys=True))
    if args.out:
        _write_json(args.out, report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# diag


def _parse_dims(text: str | None) -> tuple[ModelConfig, int, int]:
    dims, n_frames, n_out = dict(GRADCHECK_DIMS), 7, 4
    for item in filter(None, (text or "").split(",")):
        key, _, val = item.partition("=")
        key = key.strip()
        try:
            if key == "maxout_widths":
                dims[key] = [int(v) for v in val.split("x")]
            elif key == "frames":
                n_frames = int(val)
            elif key == "outputs":
                n_out = int(val)
            elif key in dims or key in ("maxout_pieces", "head_pieces"):
                dims[key] = int(val)
            else:
                raise UsageError(f"unknown gradcheck dimension {key!r}")
        except ValueError:
            raise UsageError(f"bad value for {key}: {val!r}") from None
    return ModelConfig(**dims), n_frames, n_out


def cmd_diag(args) -> int:
    if not (args.gate_shape or args.gradcheck):
        raise UsageError("diag needs --gate-shape and/or --gradcheck")
    status = EXIT_OK
    if args.gate_shape:
        if not args.checkpoint:
            raise UsageError("--gate-shape needs --checkpoint")
        (lo, hi), step = args.gate_shape, args.step
        if hi < lo or step <= 0:
            raise UsageError("--gate-shape needs LO <= HI and --step > 0")
        ck = load_checkpoint(args.checkpoint)
        rows = gate_shape_dump(ck.params.group(GATE), lo, hi, step)
        text = "delta\tgate\n" + "".join(f"{d:g}\t{v:.10g}\n" for d, v in rows)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    if args.gradcheck:
        cfg, n_frames, n_out = _parse_dims(args.dims)
        report = full_loss_gradcheck(cfg, n_frames, n_out, seed=args.seed or 0)
        for name, err in report.errors.items():
            print(f"{name}\t{err:.3e}")
        print(f"max relative error {report.max_error:.3e} (tolerance {report.tol:g}): "
              f"{'PASS' if report.passed else 'FAIL'}")
        if not report.passed:
            status = EXIT_NUMERIC
    return status


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attnseq", description="Attention-based sequence transduction toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS threads; 1 (default) is the bit-reproducible mode")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--spec", help="JSON file with synthetic-corpus settings")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-dev", type=int, default=200)
    s.add_argument("--n-test", type=int, default=200)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="experiment config (JSON); defaults if omitted")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--vocab")
    t.add_argument("--out")
    t.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode a dataset")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    mode = d.add_mutually_exclusive_group()
    mode.add_argument("--greedy", action="store_true")
    mode.add_argument("--beam", type=int, default=10)
    d.add_argument("--nbest", type=int, default=1)
    d.add_argument("--dump-alignments", metavar="DIR")
    d.add_argument("--out", help="hypothesis file (JSON lines); stdout if omitted")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score hypotheses against a reference dataset")
    e.add_argument("--ref", required=True)
    e.add_argument("--hyp", required=True)
    e.add_argument("--map", help="label map applied to both sides before scoring")
    e.add_argument("--out", help="also write the report as JSON")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("diag", help="gate-shape dump and gradient check")
    g.add_argument("--checkpoint")
    g.add_argument("--gate-shape", nargs=2, type=float, metavar=("LO", "HI"),
                   help="tabulate the gate on LO..HI (relative positions)")
    g.add_argument("--step", type=float, default=1.0)
    g.add_argument("--gradcheck", action="store_true")
    g.add_argument("--dims", help="gradcheck sizes, e.g. feat_dim=3,enc_hidden=4,maxout_widths=6x6,frames=7")
    g.add_argument("--out")
    g.set_defaults(func=cmd_diag)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.threads < 1:
        print("attnseq: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"attnseq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"attnseq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"attnseq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"attnseq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
