"""Command-line entry points.

Exit codes: 0 success, 2 argument/usage error, 1 runtime error. All commands
honor --seed, falling back to the FFEINR_SEED environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .flowdata import (
    FlowField,
    downsample,
    gen_taylor_green,
    load_raw,
    save_raw,
)
from .inr_core import ModelConfig
from .metrics import MetricReport
from .reduction import compress_to_file, compression_rate, decompress, read_archive
from .training import (
    Checkpoint,
    TrainConfig,
    evaluate,
    parse_config_text,
    train_one_stage,
    train_two_stage,
)
from .viz import (
    random_seeds,
    render_error_map,
    render_magnitude_map,
    render_streamline_map,
    trace_streamlines,
    write_png,
)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FFEINR_SEED")
    return int(env) if env else 0


def parse_factors(text: str) -> list[tuple[int, int]]:
    """Parse a factor list like "4x2,2x2" into [(4, 2), (2, 2)]."""
    out = []
    for part in text.split(","):
        s, _, t = part.strip().partition("x")
        if not t:
            raise ValueError(f"bad factor {part!r}, expected like 4x2")
        out.append((int(s), int(t)))
    return out


def _sanitize(name: str) -> str:
    return "".join(ch for ch in name if ch.isalnum())


def metrics_csv(reports: list[MetricReport], channel_names) -> str:
    cols = ["factor_s", "factor_t", "method", "psnr_db", "ssim"]
    cols += [f"rmse_{_sanitize(n)}" for n in channel_names]
    lines = [",".join(cols)]
    for r in reports:
        row = [str(r.factor[0]), str(r.factor[1]), r.method,
               f"{r.psnr_db:.4f}", f"{r.ssim:.6f}"]
        row += [f"{v:.6g}" for v in r.rmse]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def _train_config(args, overrides) -> TrainConfig:
    # precedence: dataclass defaults < config file < explicit CLI flags
    base: dict = {}
    if args.config:
        base.update(_load_config_file(args.config))
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if "seed" not in base:
        base["seed"] = _resolve_seed(args)
    return TrainConfig.from_flat(base)


def _model_config(args, in_channels: int) -> ModelConfig:
    flat = ModelConfig(in_channels=in_channels).to_flat()
    if args.config:
        file_cfg = _load_config_file(args.config)
        flat.update({k: v for k, v in file_cfg.items() if k in flat})
    if getattr(args, "cf", None) is not None:
        flat["c_f"] = args.cf
        flat["lstm_hidden"] = args.cf
    if getattr(args, "width", None) is not None:
        for k in ("spatial_width", "temporal_width", "decoder_width"):
            flat[k] = args.width
    flat["in_channels"] = in_channels
    return ModelConfig.from_flat(flat)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    fld = gen_taylor_green(n=args.n, frames=args.frames, nu=args.nu, dt=args.dt)
    save_raw(fld, args.out)
    print(f"wrote {args.out} shape {fld.shape}")
    return 0


def cmd_convert(args) -> int:
    arr = np.load(args.in_path)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ValueError(f"expected a (T, H, W, C) array, got shape {arr.shape}")
    extents = tuple(float(v) for v in args.extents.split(","))
    if len(extents) != 4:
        raise ValueError("extents must be x_min,x_max,y_min,y_max")
    names = tuple(args.channels.split(",")) if args.channels else ()
    fld = FlowField(values=arr, extents=extents, dt=args.dt, channel_names=names)
    save_raw(fld, args.out)
    print(f"wrote {args.out} shape {fld.shape}")
    return 0


def cmd_downsample(args) -> int:
    fld = load_raw(args.in_path)
    out = downsample(fld, args.sx, args.st)
    save_raw(out, args.out)
    print(f"wrote {args.out} shape {out.shape}")
    return 0


def cmd_train(args) -> int:
    high = load_raw(args.data)
    overrides = dict(
        sx=args.sx, st=args.st, iters=args.iters, batch=args.batch,
        patch=args.patch, lr=args.lr, seed=args.seed,
        two_stage=args.two_stage or None, stage2_iters=args.stage2_iters,
    )
    cfg = _train_config(args, overrides)
    low = downsample(high, cfg.sx, cfg.st)
    model_cfg = _model_config(args, high.n_channels)
    train = train_two_stage if cfg.two_stage else train_one_stage
    ckpt = train(low, high, cfg, model_cfg)
    ckpt.save(args.out)
    print(
        f"wrote {args.out} after {ckpt.iteration} iterations "
        f"(final loss {ckpt.loss_history[-1]:.6f})"
    )
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    high = load_raw(args.data)
    factors = parse_factors(args.factors)
    reports = evaluate(ckpt, high, factors)
    csv = metrics_csv(reports, high.channel_names)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv)
        print(f"wrote {args.out}")
    sys.stdout.write(csv)
    return 0


def cmd_compress(args) -> int:
    high = load_raw(args.data)
    overrides = dict(
        sx=args.sx, st=args.st, iters=args.iters, batch=args.batch,
        patch=args.patch, lr=args.lr, seed=args.seed,
    )
    cfg = _train_config(args, overrides)
    model_cfg = _model_config(args, high.n_channels)
    archive = compress_to_file(args.out, high, cfg, model_cfg)
    report = compression_rate(archive, high)
    print(
        f"wrote {args.out}: {report.archive_bytes} bytes "
        f"(rate {report.ratio:.2f}:1, model {report.checkpoint_bytes} B, "
        f"data {report.lowres_bytes} B)"
    )
    return 0


def cmd_decompress(args) -> int:
    archive = read_archive(args.archive)
    if args.dims:
        dims = tuple(int(v) for v in args.dims.lower().split("x"))
        if len(dims) != 3:
            raise ValueError("dims must be TxHxW")
    else:
        dims = archive.original_dims[:3]
    fld = decompress(archive, dims)
    save_raw(fld, args.out)
    print(f"wrote {args.out} shape {fld.shape}")
    return 0


def cmd_plot(args) -> int:
    fld = load_raw(args.data)
    if not 0 <= args.frame < fld.n_frames:
        raise ValueError(f"frame {args.frame} out of range (0..{fld.n_frames - 1})")
    frame = fld.values[args.frame]
    if args.error_against:
        other = load_raw(args.error_against)
        img = render_error_map(frame, other.values[args.frame])
    else:
        img = render_magnitude_map(frame)
    write_png(args.out, img.rgb)
    print(f"wrote {args.out} (scale {img.vmin:.4g}..{img.vmax:.4g})")
    return 0


def cmd_streamlines(args) -> int:
    fld = load_raw(args.data)
    if fld.n_channels < 2:
        raise ValueError("streamlines need a 2-channel vector field")
    if not 0 <= args.frame < fld.n_frames:
        raise ValueError(f"frame {args.frame} out of range (0..{fld.n_frames - 1})")
    frame = fld.values[args.frame]
    rng = np.random.default_rng(_resolve_seed(args))
    seeds = random_seeds(fld.extents, args.n_seeds, rng)
    step = args.step
    if step is None:
        # about one grid cell of travel per step at the fastest speed
        x_min, x_max, y_min, y_max = fld.extents
        cell = min((x_max - x_min) / (fld.shape[2] - 1), (y_max - y_min) / (fld.shape[1] - 1))
        speed = float(np.hypot(frame[:, :, 0], frame[:, :, 1]).max())
        step = cell / max(speed, 1e-9)
    lines = trace_streamlines(frame, fld.extents, seeds, step, args.max_steps)
    img = render_streamline_map(frame, fld.extents, lines)
    write_png(args.out, img.rgb)
    print(f"wrote {args.out} ({len(lines)} streamlines)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p, out_default=None, out_required=False):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (or FFEINR_SEED env)")
    p.add_argument("--config", default=None, help="key = value config file")
    if out_required:
        p.add_argument("--out", required=True, help="output path")
    else:
        p.add_argument("--out", default=out_default, help="output path")


def _add_train_flags(p):
    p.add_argument("--sx", type=int, default=None, help="spatial factor")
    p.add_argument("--st", type=int, default=None, help="temporal factor")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--cf", type=int, default=None, help="feature channels")
    p.add_argument("--width", type=int, default=None, help="implicit net width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffeinr",
        description="Flow-field super-resolution toolkit: train, evaluate, "
        "compress, decompress, and render flow fields.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a decaying vortex test field")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--frames", type=int, default=33)
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--dt", type=float, default=0.25)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("convert", help="convert a .npy array to the raw format")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--extents", default="0,1,0,1")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--channels", default=None)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("downsample", help="strided space-time downsampling")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--sx", type=int, required=True)
    p.add_argument("--st", type=int, required=True)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("train", help="train a model on a raw field")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--two-stage", action="store_true")
    p.add_argument("--stage2-iters", dest="stage2_iters", type=int, default=None)
    _add_common(p, out_default="model.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="factor-sweep metrics vs the trilinear baseline")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factors", default="4x2,2x2,4x4,4x8")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compress", help="train and bundle into one archive")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct a field from an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--dims", default=None, help="TxHxW (default: original dims)")
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("plot", help="magnitude or error map of one frame")
    p.add_argument("--data", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--error-against", dest="error_against", default=None)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("streamlines", help="trace and render streamlines")
    p.add_argument("--data", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=20)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=2000)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_streamlines)

    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
