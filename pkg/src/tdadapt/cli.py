"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from tdadapt.datamodel import (
    RAWMAT_MAGIC,
    SourceDataset,
    TargetDataset,
    load_checkpoint,
    load_csv,
    load_labels,
    load_rawmat,
    save_checkpoint,
    save_csv,
    save_labels,
    synth_blobs,
)
from tdadapt.errors import ConfigError, DataFormatError, DomainError, NumericalError, ShapeError
from tdadapt.features import ARCHITECTURES
from tdadapt.trainer import TrainConfig, evaluate, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_DEFAULTS = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _echo(out, items: dict) -> None:
    for key, value in items.items():
        out.write(f"# {key}={_fmt(value)}\n")


def _load_source(path: str) -> SourceDataset:
    return load_csv(path, has_labels=True)


def _load_target(path: str) -> TargetDataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == RAWMAT_MAGIC:
        return TargetDataset(load_rawmat(path).astype(np.float64))
    return load_csv(path, has_labels=False)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tdadapt", description="Transductive domain adaptation with graph-cut label propagation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="generate a rotated/shifted Gaussian-blob benchmark")
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--rotate", type=float, default=0.0, help="target rotation in degrees")
    s.add_argument("--shift", type=float, nargs="+", default=None, help="target shift vector")
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="run the alternating training loop")
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--out", required=True, help="checkpoint path; the trace goes to <out>.trace.csv")
    t.add_argument("--labels", help="target ground truth, used only to report final accuracy")
    t.add_argument("--iters", type=int, default=_DEFAULTS.max_iters)
    t.add_argument("--batch-size", type=int, default=_DEFAULTS.batch_size)
    t.add_argument("--margin", type=float, default=_DEFAULTS.margin)
    t.add_argument("--lambda", dest="lam", type=float, default=_DEFAULTS.lam)
    t.add_argument("--knn-k", type=int, default=_DEFAULTS.knn_k)
    t.add_argument("--lr", type=float, default=_DEFAULTS.learning_rate)
    t.add_argument("--seed", type=int, default=_DEFAULTS.seed)
    t.add_argument("--arch", choices=ARCHITECTURES, default=_DEFAULTS.arch)
    t.add_argument("--d-out", type=int, default=_DEFAULTS.d_out)
    t.add_argument("--d-hidden", type=int, default=_DEFAULTS.d_hidden)
    t.add_argument("--reg-w", type=float, default=_DEFAULTS.reg_w)
    t.add_argument("--adagrad-eps", type=float, default=_DEFAULTS.adagrad_epsilon)
    t.add_argument("--no-label-propagation", action="store_true")
    t.add_argument("--no-feature-learning", action="store_true")

    for name, help_ in (("transduce", "label target points with a checkpoint"), ("eval", "score a checkpoint against target ground truth")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--source", required=True)
        e.add_argument("--target", required=True)
        e.add_argument("--knn-k", type=int, default=None, help="default: value stored in the checkpoint")
        e.add_argument("--lambda", dest="lam", type=float, default=None, help="default: value stored in the checkpoint")
        if name == "eval":
            e.add_argument("--labels", required=True)
            e.add_argument("--mode", choices=("nn", "propagated"), default="propagated")
        else:
            e.add_argument("--no-label-propagation", action="store_true")
            e.add_argument("--out", help="write labels here instead of stdout")

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("--ckpt", required=True)
    return p


def _cmd_synth(args, out) -> int:
    _echo(out, vars(args))
    src, tgt = synth_blobs(args.classes, args.per_class, args.dim, args.rotate, args.shift, args.noise, args.seed)
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    save_csv(d / "source.csv", src.points, src.labels)
    save_csv(d / "target.csv", tgt.points)
    save_labels(d / "target_labels.csv", tgt.evaluation_labels())
    out.write(f"source_points={src.n}\ntarget_points={tgt.n}\n")
    return EXIT_OK


def _cmd_train(args, out) -> int:
    source = _load_source(args.source)
    target = _load_target(args.target)
    cfg = TrainConfig(
        batch_size=args.batch_size, margin=args.margin, lam=args.lam, knn_k=args.knn_k,
        learning_rate=args.lr, max_iters=args.iters, seed=args.seed, arch=args.arch,
        d_out=args.d_out, d_hidden=args.d_hidden, reg_w=args.reg_w,
        label_propagation=not args.no_label_propagation,
        feature_learning=not args.no_feature_learning,
        adagrad_epsilon=args.adagrad_eps,
    ).resolved(source.dim)
    _echo(out, {"source": args.source, "target": args.target, "out": args.out, "labels": args.labels})
    _echo(out, {f.name: getattr(cfg, f.name) for f in fields(cfg)})

    ckpt, report = train(source, target, cfg)
    save_checkpoint(ckpt, args.out)
    trace = f"{args.out}.trace.csv"
    report.write_csv(trace)
    for w in report.warnings:
        out.write(f"# warning: {w}\n")
    out.write(f"iterations={ckpt.iteration}\nconverged={str(report.converged).lower()}\n")
    if report.records:
        out.write(f"final_loss={report.records[-1].loss:.6g}\n")
    out.write(f"trace={trace}\n")
    if args.labels:
        scored = target.with_ground_truth(load_labels(args.labels))
        report.final_accuracy = evaluate(ckpt, source, scored, "propagated" if cfg.label_propagation else "nn")
        out.write(f"accuracy={report.final_accuracy:.6g}\n")
    return EXIT_OK


def _cmd_transduce(args, out) -> int:
    ckpt = load_checkpoint(args.ckpt)
    source = _load_source(args.source)
    target = _load_target(args.target)
    mode = "nn" if args.no_label_propagation else "propagated"
    k = ckpt.config.get("knn_k", 4) if args.knn_k is None else args.knn_k
    lam = ckpt.config.get("lam", 0.5) if args.lam is None else args.lam
    _echo(out, {"ckpt": args.ckpt, "source": args.source, "target": args.target, "knn_k": k, "lambda": float(lam), "mode": mode})
    result = predict(ckpt, source, target.points, mode, k, lam)
    lines = [f"{i},{y}\n" for i, y in enumerate(result.labels)] + [f"# energy={result.energy:.6g}\n"]
    if args.out:
        Path(args.out).write_text("".join(lines), encoding="utf-8")
        out.write(f"labels={args.out}\n")
    else:
        out.writelines(lines)
    return EXIT_OK


def _cmd_eval(args, out) -> int:
    ckpt = load_checkpoint(args.ckpt)
    source = _load_source(args.source)
    target = _load_target(args.target).with_ground_truth(load_labels(args.labels))
    k = ckpt.config.get("knn_k", 4) if args.knn_k is None else args.knn_k
    lam = ckpt.config.get("lam", 0.5) if args.lam is None else args.lam
    _echo(out, {"ckpt": args.ckpt, "source": args.source, "target": args.target, "labels": args.labels,
                "knn_k": k, "lambda": float(lam), "mode": args.mode})
    acc = evaluate(ckpt, source, target, args.mode, k, lam)
    out.write(f"accuracy={acc:.6g}\n")
    return EXIT_OK


def _cmd_inspect(args, out) -> int:
    _echo(out, {"ckpt": args.ckpt})
    ckpt = load_checkpoint(args.ckpt)
    f = ckpt.features
    out.write(
        f"arch={f.arch}\nd_in={f.d_in}\nd_hidden={f.d_hidden}\nd_out={f.d_out}\n"
        f"n_params={f.n_params}\niteration={ckpt.iteration}\nseed={ckpt.seed}\n"
    )
    for key in sorted(ckpt.config):
        out.write(f"config.{key}={_fmt(ckpt.config[key])}\n")
    return EXIT_OK


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "transduce": _cmd_transduce,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
}


def run(argv: list[str] | None = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NumericalError as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (DataFormatError, ShapeError, DomainError, OSError) as exc:
        err.write(f"data error: {exc}\n")
        return EXIT_DATA


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
