"""``windownet`` command-line entry point.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 I/O error,
4 data error. Every command prints the fingerprint of its resolved
settings on stderr so runs can be matched to their outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from . import experiments as ex
from . import imagepipe, synthlab
from .multiwindow import recover_windows
from .tinynet import CheckpointError, TrainConfig, load_checkpoint, save_checkpoint
from .windowing import (
    AffineWindow,
    WindowParameterError,
    WindowSpec,
    apply_window,
    from_affine,
    to_affine,
)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3, 4

logger = logging.getLogger("windownet")

FRONT_CHOICES = ("8bit", "12bit", "window", "multiwindow", "plain")


class UsageError(Exception):
    pass


def _fingerprint(command: str, items: Dict[str, str]) -> None:
    items = dict(items, command=command)
    print(f"config fingerprint: {ex.config_fingerprint(items)}", file=sys.stderr)


def _read_items(path: str) -> Dict[str, str]:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    items = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            items[k.strip()] = v.strip()
    return items


# --- window -------------------------------------------------------------


def _window_from_args(args) -> WindowSpec:
    return WindowSpec(args.level, args.width)


def cmd_window_apply(args) -> int:
    w = _window_from_args(args)
    img = imagepipe.load_image(args.input)
    _fingerprint("window apply", {"level": repr(w.level), "width": repr(w.width), "input": args.input})
    v = apply_window(img.data, w)
    out = np.floor((v - w.lower) * (255.0 / w.width) + 0.5)
    meta = {"level": f"{w.level:g}", "width": f"{w.width:g}", "source_bit_depth": str(img.bit_depth)}
    imagepipe.write_pgm(args.output, imagepipe.ImageTensor(out[:1], 8, meta), maxval=255)
    print(f"level={w.level:g} width={w.width:g} -> {args.output}")
    return EXIT_OK


def cmd_window_affine(args) -> int:
    w = _window_from_args(args)
    _fingerprint("window affine", {"level": repr(w.level), "width": repr(w.width)})
    a = to_affine(w)
    print(f"weight={a.weight!r} bias={a.bias!r} ceiling={a.ceiling!r}")
    return EXIT_OK


def cmd_window_from_affine(args) -> int:
    _fingerprint("window from-affine", {"weight": repr(args.weight), "bias": repr(args.bias), "ceiling": repr(args.ceiling)})
    w = from_affine(AffineWindow(args.weight, args.bias, args.ceiling))
    suffix = " inverted" if w.inverted else ""
    print(f"level={w.level!r} width={w.width!r}{suffix}")
    return EXIT_OK


# --- image --------------------------------------------------------------


def cmd_image_info(args) -> int:
    _fingerprint("image info", {"input": args.input})
    img = imagepipe.load_image(args.input)
    c, h, w = img.shape
    d = img.data
    print(f"{args.input}: {c}x{h}x{w}, {img.bit_depth}-bit, min {d.min():g}, max {d.max():g}, mean {d.mean():.3f}")
    return EXIT_OK


def _write_image(path: str, img: imagepipe.ImageTensor) -> None:
    if path.lower().endswith(".pgm"):
        imagepipe.write_pgm(path, img)
    else:
        imagepipe.write_wnt(path, img)


def cmd_image_quantize(args) -> int:
    img = imagepipe.load_image(args.input)
    _fingerprint("image quantize", {"bits": str(args.bits), "mode": args.mode, "input": args.input})
    _write_image(args.output, imagepipe.quantize(img, args.bits, args.mode))
    return EXIT_OK


def cmd_image_resize(args) -> int:
    img = imagepipe.load_image(args.input)
    _fingerprint("image resize", {"height": str(args.height), "width": str(args.width), "method": args.method})
    _write_image(args.output, imagepipe.resize(img, args.height, args.width, args.method))
    return EXIT_OK


# --- dataset and training -----------------------------------------------


def _synth_config(args) -> synthlab.SynthConfig:
    items = _read_items(args.config) if args.config else {}
    for flag, key in (("n_train", "n_train"), ("n_val", "n_val"), ("n_test", "n_test"), ("image_size", "image_size")):
        v = getattr(args, flag)
        if v is not None:
            items[key] = str(v)
    if args.seed is not None:
        items["seed"] = str(args.seed)
    return synthlab.SynthConfig.from_items(items)


def cmd_synth(args) -> int:
    config = _synth_config(args)
    _fingerprint("synth", config.to_items())
    ds = synthlab.generate(config)
    synthlab.save_dataset(ds, args.out_dir)
    print(f"wrote {config.n_train}/{config.n_val}/{config.n_test} images to {args.out_dir} (fingerprint {ds.fingerprint()})")
    return EXIT_OK


def _front(args) -> ex.Front:
    if args.front == "8bit":
        return ex.Front("quantized", bits=8)
    if args.front == "12bit":
        return ex.Front("window", window=ex.IDENTITY_WINDOW)
    if args.front == "window":
        if args.level is None or args.width is None:
            raise UsageError("--front window needs --level and --width")
        return ex.Front("window", window=WindowSpec(args.level, args.width))
    return ex.Front(args.front, init_windows=tuple(ex.default_init_windows()))


def _train_config(args, base: Optional[TrainConfig] = None) -> TrainConfig:
    config = base if base is not None else ex.DESK_TRAIN_CONFIG
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["max_epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        changes["learning_rate"] = args.lr
    if getattr(args, "window_lr_scale", None) is not None:
        changes["window_lr_scale"] = args.window_lr_scale
    return replace(config, **changes)


def _load_data(path: str, splits=synthlab.SPLITS) -> synthlab.SynthDataset:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    return synthlab.load_dataset(path, splits)


def cmd_init(args) -> int:
    front = _front(args)
    config = _train_config(args, TrainConfig())
    ckpt = ex.initial_checkpoint(front, args.classes, config)
    _fingerprint("init", ckpt.items)
    path = args.output or os.path.join(args.out_dir, f"init_{args.front}.wnck")
    _ensure_parent(path)
    save_checkpoint(path, ckpt)
    print(f"wrote {path}")
    return EXIT_OK


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_train(args) -> int:
    base = ex.load_spec(args.config).train if args.config else None
    config = _train_config(args, base)
    front = _front(args)
    ds = _load_data(args.data)
    items = dict(config.to_items(), **front.describe(), dataset=ds.fingerprint())
    _fingerprint("train", items)
    run = ex.train_run(args.front, front, ds, config)
    path = args.output or os.path.join(args.out_dir, f"{args.front}.wnck")
    _ensure_parent(path)
    save_checkpoint(path, run.checkpoint)
    sys.stdout.write(run.test.to_csv())
    print(f"checkpoint {path} (epoch {run.best_epoch}, run {run.fingerprint})", file=sys.stderr)
    return EXIT_OK


def _experiment(kind: str, args) -> int:
    spec = ex.load_spec(args.config) if args.config else ex.ExperimentSpec(kind)
    if spec.kind != kind:
        raise UsageError(f"config describes a {spec.kind!r} experiment, not {kind!r}")
    changes = {"train": _train_config(args, spec.train)}
    if args.data is not None:
        changes["dataset"] = args.data
    if getattr(args, "full_grid", False):
        changes["full_grid"] = True
        changes["grid"] = None
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    spec = replace(spec, **changes)
    if spec.dataset is None:
        raise UsageError("no dataset given (use --data or set dataset= in the config)")
    items = dict(spec.train.to_items(), kind=kind, dataset=os.path.abspath(spec.dataset))
    if kind == "grid":
        items["grid"] = ";".join(f"{w.level:g}:{w.width:g}" for w in spec.windows())
    _fingerprint(kind, items)
    result = ex.run_experiment(spec)
    for p in ex.report([result], args.out_dir):
        print(p)
    sys.stderr.write(ex.summary_text(result))
    return EXIT_OK


def cmd_bitdepth(args) -> int:
    return _experiment("bitdepth", args)


def cmd_grid(args) -> int:
    return _experiment("grid", args)


def cmd_multiwindow(args) -> int:
    return _experiment("multiwindow", args)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data, (args.split,))
    _fingerprint("eval", dict(ckpt.items, split=args.split, dataset=args.data))
    model = ex.model_from_checkpoint(ckpt)
    result = ex.evaluate_model(model, ds.splits[args.split])
    text = result.to_csv()
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_recover(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _fingerprint("recover", ckpt.items)
    model = ex.model_from_checkpoint(ckpt)
    if model.layer is None:
        raise ValueError(f"{args.checkpoint} has no trainable window layer")
    lines = ["channel,level,width,inverted"]
    for i, w in enumerate(recover_windows(model.layer)):
        lines.append(f"{i},{w.level!r},{w.width!r},{int(w.inverted)}")
    text = "\n".join(lines) + "\n"
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- parser -------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="override the random seed")
    g.add_argument("--config", default=None, help="key=value settings file; flags take precedence")
    g.add_argument("--out-dir", default=".", help="directory for outputs (default: current directory)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None, help="maximum number of epochs")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--window-lr-scale", type=float, default=None, help="learning-rate multiplier for window weights and biases")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="windownet", description="Learnable intensity windowing toolkit.")
    parser.add_argument("--version", action="version", version="windownet 0.1.0")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    win = sub.add_parser("window", help="window arithmetic and application")
    wsub = win.add_subparsers(dest="window_command", metavar="ACTION")
    wsub.required = True
    p = wsub.add_parser("apply", parents=[common], help="window an image and write an 8-bit PGM")
    p.add_argument("--level", type=float, required=True, help="window level (centre), raw units")
    p.add_argument("--width", type=float, required=True, help="window width, raw units")
    p.add_argument("--input", required=True, help="PGM or WNT1 image")
    p.add_argument("--output", required=True, help="8-bit PGM to write")
    p.set_defaults(func=cmd_window_apply)
    p = wsub.add_parser("affine", parents=[common], help="print the clamped-affine form of a window")
    p.add_argument("--level", type=float, required=True, help="window level")
    p.add_argument("--width", type=float, required=True, help="window width")
    p.set_defaults(func=cmd_window_affine)
    p = wsub.add_parser("from-affine", parents=[common], help="recover level and width from affine parameters")
    p.add_argument("--weight", type=float, required=True, help="affine weight")
    p.add_argument("--bias", type=float, required=True, help="affine bias")
    p.add_argument("--ceiling", type=float, required=True, help="upper clamp value")
    p.set_defaults(func=cmd_window_from_affine)

    img = sub.add_parser("image", help="image inspection and conversion")
    isub = img.add_subparsers(dest="image_command", metavar="ACTION")
    isub.required = True
    p = isub.add_parser("info", parents=[common], help="print shape, bit depth and range")
    p.add_argument("--input", required=True, help="PGM or WNT1 image")
    p.set_defaults(func=cmd_image_info)
    p = isub.add_parser("quantize", parents=[common], help="reduce bit depth")
    p.add_argument("--input", required=True, help="PGM or WNT1 image")
    p.add_argument("--output", required=True, help="output file (.pgm for PGM, otherwise WNT1)")
    p.add_argument("--bits", type=int, default=8, help="target bit depth (default 8)")
    p.add_argument("--mode", choices=("round-rescale", "shift"), default="round-rescale", help="quantization rule")
    p.set_defaults(func=cmd_image_quantize)
    p = isub.add_parser("resize", parents=[common], help="resample to a new size")
    p.add_argument("--input", required=True, help="PGM or WNT1 image")
    p.add_argument("--output", required=True, help="output file (.pgm for PGM, otherwise WNT1)")
    p.add_argument("--height", type=int, required=True, help="output height")
    p.add_argument("--width", type=int, required=True, help="output width")
    p.add_argument("--method", choices=("bilinear", "nearest"), default="bilinear", help="interpolation")
    p.set_defaults(func=cmd_image_resize)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset into --out-dir")
    p.add_argument("--n-train", type=int, default=None, help="training images (default 2000)")
    p.add_argument("--n-val", type=int, default=None, help="validation images (default 500)")
    p.add_argument("--n-test", type=int, default=None, help="test images (default 500)")
    p.add_argument("--image-size", type=int, default=None, help="image side length (default 64)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", parents=[common], help="write an untrained checkpoint")
    p.add_argument("--front", choices=FRONT_CHOICES, default="multiwindow", help="input front-end")
    p.add_argument("--level", type=float, default=None, help="window level for --front window")
    p.add_argument("--width", type=float, default=None, help="window width for --front window")
    p.add_argument("--classes", type=int, default=14, help="number of output classes")
    p.add_argument("--output", default=None, help="checkpoint path (default: OUT_DIR/init_FRONT.wnck)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", parents=[common], help="train one model and write its checkpoint")
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--front", choices=FRONT_CHOICES, default="multiwindow", help="input front-end")
    p.add_argument("--level", type=float, default=None, help="window level for --front window")
    p.add_argument("--width", type=float, default=None, help="window width for --front window")
    p.add_argument("--output", default=None, help="checkpoint path (default: OUT_DIR/FRONT.wnck)")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, helptext, func in (
        ("bitdepth", "8-bit versus 12-bit input", cmd_bitdepth),
        ("grid", "fixed-window grid search", cmd_grid),
        ("multiwindow", "trainable windows versus ablations", cmd_multiwindow),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", default=None, help="dataset directory (or dataset= in the config)")
        _train_flags(p)
        if name == "grid":
            p.add_argument("--full-grid", action="store_true", help="search all 75 windows instead of the subsample")
            p.add_argument("--workers", type=int, default=None, help="parallel training processes")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="per-class AUC CSV of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=synthlab.SPLITS, default="test", help="split to evaluate (default test)")
    p.add_argument("--output", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recover", parents=[common], help="print level and width of every window channel")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--output", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_recover)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, WindowParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"windownet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError) as exc:
        print(f"windownet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, IndexError) as exc:
        print(f"windownet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        logger.debug("internal error", exc_info=True)
        print(f"windownet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
