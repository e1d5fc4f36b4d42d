"""Command line: ``pgstyle train | stylize | bench``.

Exit codes: 0 success, 2 bad usage / paths / data, 3 checkpoint incompatible
with the requested flags, 1 any other pipeline failure.
"""
from __future__ import annotations

import argparse
import logging
import statistics
import sys
import time
from pathlib import Path

import torch

from .config import AGGREGATORS, METRICS, ModelConfig, TrainConfig, load_config, seed_from_env
from .errors import (CheckpointError, ConfigError, DataError, IncompatibleCheckpointError,
                     InputTooSmallError, ParameterError, StyleTransferError)
from .plotting import REFERENCE_SECONDS, plot_bench, plot_loss_curve

log = logging.getLogger("pgstyle")

EXIT_USAGE = 2
EXIT_INCOMPATIBLE = 3

_T = TrainConfig()
_M = ModelConfig()


class UsageError(Exception):
    pass


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32)


def _add_inference_flags(p, defaults: ModelConfig):
    p.add_argument("--k", type=int, default=defaults.k, help="neighbours per content patch (inter and intra)")
    p.add_argument("--patch-size", type=int, default=defaults.patch_size, help="patch side p in feature pixels")
    p.add_argument("--stride", type=int, default=defaults.stride, help="sliding-window stride")
    p.add_argument("--metric", choices=METRICS, default=defaults.metric, help="patch similarity for KNN")
    p.add_argument("--aggregator", choices=AGGREGATORS, default=defaults.aggregator, help="message-passing scheme")
    p.add_argument("--no-intra", action="store_true", help="drop content-to-content edges")
    p.add_argument("--no-deformable", action="store_true", help="fixed-size style patches (no scale prediction)")
    p.add_argument("--no-refine", action="store_true", help="skip global AdaIN refinement")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgstyle", description=__doc__, formatter_class=_formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every training iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model", formatter_class=_formatter)
    t.add_argument("--content-dir", required=True, help="directory of content images")
    t.add_argument("--style-dir", required=True, help="directory of style images")
    t.add_argument("--out", default="runs/train", help="output directory (checkpoint, loss.csv, loss.png)")
    t.add_argument("--config", default=None, help="YAML/JSON config; explicit flags override it")
    t.add_argument("--mode", choices=("tiny", "full"), default=_M.mode, help="network size")
    t.add_argument("--weights", default=None, help="VGG-19 weights file for full mode")
    t.add_argument("--iterations", type=int, default=_T.iterations, help="training iterations T")
    t.add_argument("--batch-size", type=int, default=_T.batch_size, help="images per iteration")
    t.add_argument("--lr", type=float, default=_T.learning_rate, help="Adam learning rate")
    t.add_argument("--weight-decay", type=float, default=_T.weight_decay, help="decoupled weight decay")
    t.add_argument("--lambda", dest="lam", type=float, default=_T.lam, help="style loss weight")
    t.add_argument("--heads", type=int, default=_M.heads, help="attention heads")
    t.add_argument("--image-size", type=int, default=None, help="crop side (default 256 full / 64 tiny)")
    t.add_argument("--seed", type=int, default=_T.seed, help="random seed (PGS_SEED overrides)")
    _add_inference_flags(t, _M)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("stylize", help="stylize one content image", formatter_class=_formatter)
    s.add_argument("--checkpoint", required=True, help="trained checkpoint")
    s.add_argument("--content", required=True, help="content image")
    s.add_argument("--style", required=True, help="style image")
    s.add_argument("--out", required=True, help="output PNG path")
    s.add_argument("--size", type=int, default=None, help="resize+crop both inputs to this side")
    s.add_argument("--dump-graph", default=None, help="write the graph edge list to this file")
    _add_inference_flags(s, _M)
    s.set_defaults(func=cmd_stylize)

    b = sub.add_parser("bench", help="time stylization per image size", formatter_class=_formatter)
    b.add_argument("--checkpoint", required=True, help="trained checkpoint")
    b.add_argument("--sizes", default="256,384,512", help="comma-separated square image sides")
    b.add_argument("--repeats", type=int, default=3, help="timed runs per size")
    b.add_argument("--out", default=None, help="directory for bench.tsv and bench.png")
    b.add_argument("--seed", type=int, default=0, help="seed for the synthetic inputs")
    b.set_defaults(func=cmd_bench)
    return parser


def _explicit(argv, *flags):
    return any(a == f or a.startswith(f + "=") for a in argv for f in flags)


def _train_config(args, argv) -> TrainConfig:
    base = load_config(args.config) if args.config else TrainConfig()
    m = base.model
    # explicit flags win over the config file; the file wins over built-in defaults
    pick = (lambda flag, val, cur: val if (_explicit(argv, flag) or not args.config) else cur)
    model = m.replace(
        mode=pick("--mode", args.mode, m.mode),
        weights_path=args.weights or m.weights_path,
        patch_size=pick("--patch-size", args.patch_size, m.patch_size),
        stride=pick("--stride", args.stride, m.stride),
        k=pick("--k", args.k, m.k),
        metric=pick("--metric", args.metric, m.metric),
        aggregator=pick("--aggregator", args.aggregator, m.aggregator),
        heads=pick("--heads", args.heads, m.heads),
        intra_enabled=m.intra_enabled and not args.no_intra,
        deformable_enabled=m.deformable_enabled and not args.no_deformable,
        refine_enabled=m.refine_enabled and not args.no_refine,
    )
    seed = seed_from_env(pick("--seed", args.seed, base.seed))
    return TrainConfig(
        model=model.replace(seed=seed),
        iterations=pick("--iterations", args.iterations, base.iterations),
        batch_size=pick("--batch-size", args.batch_size, base.batch_size),
        learning_rate=pick("--lr", args.lr, base.learning_rate),
        weight_decay=pick("--weight-decay", args.weight_decay, base.weight_decay),
        lam=pick("--lambda", args.lam, base.lam),
        seed=seed,
        image_size=args.image_size if args.image_size is not None else base.image_size,
    )


def cmd_train(args, argv) -> int:
    from .trainer import train

    for flag, d in (("--content-dir", args.content_dir), ("--style-dir", args.style_dir)):
        if not Path(d).is_dir():
            raise UsageError(f"{flag}: no such directory: {d}")
    cfg = _train_config(args, argv)
    out = Path(args.out)
    result = train(args.content_dir, args.style_dir, cfg, out_dir=out)
    plot_loss_curve(result.history, out / "loss.png", cfg.lam)
    print(f"wrote {out / 'model.ckpt'}, {out / 'loss.csv'}, {out / 'loss.png'}")
    return 0


def _inference_overrides(args):
    return dict(k=args.k, patch_size=args.patch_size, stride=args.stride, metric=args.metric,
                intra_enabled=not args.no_intra, deformable_enabled=not args.no_deformable,
                refine_enabled=not args.no_refine)


def _load_model(path, aggregator=None):
    from .trainer import load_checkpoint, read_checkpoint
    from .config import model_config_from_dict

    if not Path(path).is_file():
        raise UsageError(f"--checkpoint: no such file: {path}")
    meta, _ = read_checkpoint(path)
    stored = model_config_from_dict(meta["model"])
    cfg = stored if aggregator is None else stored.replace(aggregator=aggregator)
    return load_checkpoint(path, cfg)


def cmd_stylize(args, argv) -> int:
    from .data import load_image, save_image

    for flag, f in (("--content", args.content), ("--style", args.style)):
        if not Path(f).is_file():
            raise UsageError(f"{flag}: no such file: {f}")
    model = _load_model(args.checkpoint, args.aggregator)
    content = load_image(args.content, args.size)
    style = load_image(args.style, args.size)
    try:
        with torch.no_grad():
            out, traces = model(content[None], style[None], return_traces=True, **_inference_overrides(args))
    except (ParameterError, InputTooSmallError) as e:
        raise IncompatibleCheckpointError(f"flags do not fit this model/input: {e}") from e
    save_image(out[0], args.out)
    if args.dump_graph:
        with open(args.dump_graph, "w") as fh:
            traces[0].graph.dump(fh)
    print(f"wrote {args.out}")
    return 0


def bench_rows(model, sizes, repeats, seed=0):
    gen = torch.Generator().manual_seed(seed)
    rows = []
    for size in sizes:
        content = torch.rand(1, 3, size, size, generator=gen)
        style = torch.rand(1, 3, size, size, generator=gen)
        times = []
        with torch.no_grad():
            for _ in range(repeats):
                t0 = time.perf_counter()
                model(content, style)
                times.append(time.perf_counter() - t0)
        rows.append((size, statistics.fmean(times), statistics.pstdev(times) if len(times) > 1 else 0.0))
    return rows


def format_bench(rows, repeats) -> str:
    lines = ["size\tseconds_per_image\tstd\trepeats"]
    lines += [f"{s}\t{m:.4f}\t{sd:.4f}\t{repeats}" for s, m, sd in rows]
    header = " | ".join(f"{s}x{s}" for s, _, _ in rows)
    lines.append(f"# Methods | {header}")
    lines.append("# measured (this machine) | " + " | ".join(f"{m:.3f}" for _, m, _ in rows))
    ref = [REFERENCE_SECONDS.get(s) for s, _, _ in rows]
    lines.append("# reference (Tesla A100 GPU, for context only) | "
                 + " | ".join("n/a" if r is None else f"{r:.3f}" for r in ref))
    return "\n".join(lines)


def cmd_bench(args, argv) -> int:
    try:
        sizes = [int(v) for v in args.sizes.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    if not sizes or args.repeats < 1:
        raise UsageError("need at least one size and --repeats >= 1")
    model = _load_model(args.checkpoint)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        rows = bench_rows(model, sizes, args.repeats, args.seed)
    finally:
        torch.set_num_threads(threads)
    text = format_bench(rows, args.repeats)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.tsv").write_text(text + "\n")
        plot_bench(rows, out / "bench.png")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"pgstyle {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleCheckpointError as e:
        print(f"pgstyle {args.command}: incompatible: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (DataError, ConfigError, CheckpointError) as e:
        print(f"pgstyle {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StyleTransferError as e:
        print(f"pgstyle {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
