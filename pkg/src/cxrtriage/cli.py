"""Single command-line entry point wiring all pipeline stages.

Exit codes: 0 ok, 2 usage, 3 data-format, 4 model-format, 5 runtime.
Unless --quiet, every run echoes its resolved configuration and the
content hashes of its input files to stderr, so results can be tied back
to exact inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import data, models, verify
from .errors import (BuildError, ConfigError, CxrError, DataFormatError,
                     DecodeError, IngestError, ModelFormatError)
from .serve import (DEFAULT_BIND, DEFAULT_MAX_BODY, load_bundle,
                    predict_report, serve as run_server)
from .train import (OPTIMIZERS, TrainConfig, WEIGHTINGS, evaluate,
                    export_history, train as train_network)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA_FORMAT = 3
EXIT_MODEL_FORMAT = 4
EXIT_RUNTIME = 5


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _emit_header(args, config: dict, inputs: list) -> None:
    """Reproducibility header: resolved config + input content hashes."""
    if args.quiet:
        return
    hashes = []
    for role, path in inputs:
        try:
            hashes.append({"role": role, "path": str(path),
                           "sha256": _sha256(path)})
        except OSError:
            hashes.append({"role": role, "path": str(path), "sha256": None})
    if args.log == "json":
        print(json.dumps({"run": args.command, "config": config,
                          "inputs": hashes}), file=sys.stderr)
    else:
        flags = " ".join(f"{k}={v}" for k, v in config.items())
        print(f"# cxrtriage {args.command} {flags}", file=sys.stderr)
        for entry in hashes:
            print(f"# input {entry['role']} {entry['path']} "
                  f"sha256={entry['sha256']}", file=sys.stderr)


def _out(args, obj: dict, text_lines: list) -> None:
    """Machine-facing stdout: JSON in --log json mode, text otherwise."""
    if args.log == "json":
        print(json.dumps(obj))
    else:
        for line in text_lines:
            print(line)


def _resolved_channels(args, fallback: int) -> int:
    return fallback if args.channels is None else args.channels


def _require_file(path: str, exc_class, what: str) -> str:
    if not Path(path).is_file():
        raise exc_class(f"{what} {path!r} does not exist")
    return path


# --- subcommands -------------------------------------------------------

def cmd_ingest(args) -> int:
    channels = _resolved_channels(args, 1)
    _emit_header(args, {"root": args.root, "out": args.out,
                        "channels": channels}, [])
    archive, report = data.ingest(args.root, channels)
    data.write_archive(archive, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    lines = [f"ingested {report['total']} samples from {args.root}"]
    lines += [f"  {name}: {count}" for name, count in report["counts"].items()]
    if report["failures"]:
        lines.append(f"  {len(report['failures'])} files failed to decode")
    for warning in report["warnings"]:
        lines.append(f"  warning: {warning}")
    lines.append(f"wrote {args.out} (content hash {report['content_hash']})")
    _out(args, {"report": report, "out": args.out}, lines)
    return EXIT_OK


def cmd_synth(args) -> int:
    channels = _resolved_channels(args, 1)
    _emit_header(args, {"out": args.out, "per_class": args.per_class,
                        "seed": args.seed, "channels": channels}, [])
    archive = data.synthesize_dataset(args.per_class, seed=args.seed,
                                      channels=channels)
    data.write_archive(archive, args.out)
    info = {"out": args.out, "count": archive.count,
            "counts": archive.class_counts(),
            "content_hash": archive.content_hash()}
    _out(args, info,
         [f"wrote {archive.count} synthetic samples to {args.out}",
          f"content hash {info['content_hash']}"])
    return EXIT_OK


def cmd_train(args) -> int:
    _require_file(args.data, DataFormatError, "archive")
    archive = data.read_archive(args.data)
    if args.channels is not None and archive.channels != args.channels:
        raise DataFormatError(
            f"archive {args.data!r} holds {archive.channels}-channel images "
            f"but --channels {args.channels} was requested")
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, val_fraction=args.val,
        optimizer=args.opt, lr=args.lr, momentum=args.momentum,
        seed=args.seed, class_weighting=args.class_weighting,
    ).validate()
    _emit_header(args, {
        "data": args.data, "arch": args.arch, "out": args.out,
        "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "val_fraction": cfg.val_fraction, "optimizer": cfg.optimizer,
        "lr": cfg.lr, "width_mult": args.width_mult, "seed": args.seed,
        "channels": archive.channels, "stratified": args.stratified,
        "class_weighting": cfg.class_weighting,
    }, [("data", args.data)])
    spec = models.build(args.arch, archive.channels, args.width_mult)
    net = models.initialize(spec, seed=args.seed)
    plan = data.split(archive, cfg.val_fraction, seed=args.seed,
                      stratified=args.stratified)

    def progress(epoch, history):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs} "
                  f"train_loss={history.train_loss[-1]:.4f} "
                  f"train_acc={history.train_acc[-1]:.4f} "
                  f"val_loss={history.val_loss[-1]:.4f} "
                  f"val_acc={history.val_acc[-1]:.4f}", file=sys.stderr)

    history = train_network(net, archive, plan, cfg, progress)
    models.save_model(net, args.out)
    if args.history:
        export_history(history, args.history)
    model_hash = models.file_hash(args.out)
    summary = {
        "model": args.out, "model_hash": model_hash, "arch": args.arch,
        "epochs": cfg.epochs,
        "final_train_loss": history.train_loss[-1],
        "final_train_acc": history.train_acc[-1],
        "final_val_loss": history.val_loss[-1],
        "final_val_acc": history.val_acc[-1],
    }
    _out(args, summary, [
        f"trained {args.arch} for {cfg.epochs} epochs "
        f"({len(plan.train_indices)} train / {len(plan.val_indices)} val)",
        f"final train acc {history.train_acc[-1]:.4f}, "
        f"val acc {history.val_acc[-1]:.4f}",
        f"wrote {args.out} (sha256 {model_hash})",
    ])
    return EXIT_OK


def cmd_eval(args) -> int:
    _require_file(args.data, DataFormatError, "archive")
    _require_file(args.model, ModelFormatError, "model file")
    archive = data.read_archive(args.data)
    net = models.load_model(args.model, expect_channels=archive.channels)
    _emit_header(args, {"data": args.data, "model": args.model,
                        "split": args.split, "val_fraction": args.val,
                        "seed": args.seed},
                 [("data", args.data), ("model", args.model)])
    if args.split == "val":
        plan = data.split(archive, args.val, seed=args.seed)
        indices = plan.val_indices
    else:
        indices = np.arange(archive.count)
    result = evaluate(net, archive, indices)
    baseline = result.majority_baseline()
    per_class = result.confusion.sum(axis=1)
    summary = {
        "split": args.split, "count": result.count,
        "accuracy": result.accuracy, "mean_loss": result.mean_loss,
        "confusion": result.confusion.tolist(),
        "majority_baseline": baseline,
    }
    lines = [
        f"evaluated {result.count} samples ({args.split} split)",
        f"accuracy {result.accuracy:.4f}  mean loss {result.mean_loss:.4f}",
        "confusion (rows = true class):",
    ]
    for i, name in enumerate(data.CLASS_NAMES):
        row = " ".join(f"{v:6d}" for v in result.confusion[i])
        lines.append(f"  {name:<12} {row}")
    lines.append(
        f"majority-class baseline accuracy: {baseline:.4f} "
        f"({int(per_class.max())}/{int(per_class.sum())})")
    _out(args, summary, lines)
    return EXIT_OK


def cmd_predict(args) -> int:
    _require_file(args.model, ModelFormatError, "model file")
    _require_file(args.image, DataFormatError, "image")
    bundle = load_bundle(
        args.model, expect_channels=args.channels)
    _emit_header(args, {"model": args.model, "image": args.image},
                 [("model", args.model), ("image", args.image)])
    with open(args.image, "rb") as f:
        report = predict_report(bundle, f.read())
    print(json.dumps(report, indent=None if args.log == "json" else 2))
    return EXIT_OK


def cmd_serve(args) -> int:
    _require_file(args.model, ModelFormatError, "model file")
    _emit_header(args, {"model": args.model, "bind": args.bind,
                        "max_body": args.max_body, "ui": args.ui},
                 [("model", args.model)])
    run_server(args.model, bind=args.bind,
               max_body_bytes=args.max_body, log_format=args.log,
               ui_dir=args.ui, expect_channels=args.channels)
    return EXIT_OK


def cmd_verify(args) -> int:
    _emit_header(args, {"level": args.level}, [])
    results = verify.run(args.level)
    ok = True
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"[{status}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
        ok = ok and r.ok
    print(f"{sum(r.ok for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_RUNTIME


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cxrtriage",
        description="Chest X-ray triage: ingest data, train CNNs from "
                    "scratch, evaluate, and serve predictions over HTTP.")
    p.add_argument("--seed", type=int, default=0,
                   help="global RNG seed (default 0)")
    p.add_argument("--channels", type=int, choices=(1, 3), default=None,
                   help="pipeline channel count; defaults to the input "
                        "file's own channel count (1 for fresh data)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress the reproducibility header and progress")
    p.add_argument("--log", choices=("text", "json"), default="text",
                   help="stdout/stderr formatting (default text)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="build a .cxra archive from a "
                                       "class-directory image tree")
    sp.add_argument("--root", required=True, help="directory with "
                    "Normal/Pneumonia/Tuberculosis subdirectories")
    sp.add_argument("--out", required=True, help="output .cxra path")
    sp.add_argument("--report", help="write the ingestion report JSON here")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic .cxra archive")
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-class", type=int, required=True, dest="per_class")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a network on an archive")
    sp.add_argument("--data", required=True, help=".cxra archive")
    sp.add_argument("--arch", default="custom_cnn",
                    choices=sorted(models.ARCHITECTURES))
    sp.add_argument("--out", required=True, help="output .cxrm model path")
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch", type=int, default=120)
    sp.add_argument("--val", type=float, default=0.2,
                    help="validation fraction (default 0.2)")
    sp.add_argument("--width-mult", type=float, default=1.0,
                    dest="width_mult")
    sp.add_argument("--opt", choices=OPTIMIZERS, default="adam")
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--momentum", type=float, default=0.9,
                    help="sgd momentum (ignored by adam)")
    sp.add_argument("--class-weighting", choices=WEIGHTINGS,
                    default="off", dest="class_weighting")
    sp.add_argument("--stratified", action="store_true",
                    help="per-class proportional validation split")
    sp.add_argument("--history", help="write per-epoch CSV here")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a model on an archive")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", choices=("val", "all"), default="val")
    sp.add_argument("--val", type=float, default=0.2)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="score one image file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("serve", help="serve predictions over HTTP")
    sp.add_argument("--model", required=True)
    sp.add_argument("--bind", default=DEFAULT_BIND)
    sp.add_argument("--max-body", type=int, default=DEFAULT_MAX_BODY,
                    dest="max_body")
    sp.add_argument("--ui", help="also serve this static directory at /")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("verify", help="run in-process correctness checks")
    sp.add_argument("--level", choices=("fast", "full"), default="fast")
    sp.set_defaults(func=cmd_verify)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits EXIT_USAGE (2) on bad flags, 0 on --help
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (DataFormatError, IngestError, DecodeError) as exc:
        print(f"data-format error: {exc}", file=sys.stderr)
        return EXIT_DATA_FORMAT
    except ModelFormatError as exc:
        print(f"model-format error: {exc}", file=sys.stderr)
        return EXIT_MODEL_FORMAT
    except (ConfigError, BuildError, CxrError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
