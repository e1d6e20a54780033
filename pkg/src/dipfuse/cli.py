"""Command-line entry point: ``dipfuse {fuse,gains,metrics,sweep}``.

Exit codes: 0 ok, 2 bad arguments, 3 I/O failure, 4 dimension mismatch,
5 diverged optimisation (or, for ``sweep``, no run succeeded).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .fusion import DivergenceError, FusionConfig, loss_curve_csv, run_fusion
from .gains import estimate_gains
from .imagecore import Image, ImageFormatError, read_image, resize_bilinear, write_image
from .metrics import evaluate_all

log = logging.getLogger("dipfuse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIMS, EXIT_DIVERGED = 0, 2, 3, 4, 5

SWEEP_HEADER = ["pair", "channels", "pe", "mi", "q", "cv", "best_loss", "seconds"]


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read(path) -> Image:
    try:
        return read_image(path)
    except (OSError, ImageFormatError, ValueError) as exc:
        raise CLIError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes | str):
    try:
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(path, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _write_image(path, img):
    try:
        write_image(path, img)
    except (OSError, ValueError) as exc:
        raise CLIError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _odd_int(text: str) -> int:
    v = _positive_int(text)
    if v % 2 == 0:
        raise argparse.ArgumentTypeError("must be odd")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _load_pair(paths, resize=None) -> tuple[Image, Image]:
    a, b = (_read(p) for p in paths)
    if resize is not None:
        w, h = resize
        a, b = resize_bilinear(a, w, h), resize_bilinear(b, w, h)
    if a.shape != b.shape:
        raise CLIError(EXIT_DIMS, f"source dimensions differ: {a.width}x{a.height} "
                                  f"vs {b.width}x{b.height}")
    return a, b


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _write_manifest(out, argv, config, inputs, outputs, started):
    manifest = {
        "command": ["dipfuse", *argv],
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.perf_counter() - started, 3),
        "version": __version__,
    }
    path = _manifest_path(out)
    _write_bytes(path, json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_fuse(args, argv) -> int:
    started = time.perf_counter()
    a, b = _load_pair(args.src, args.resize)
    cfg = FusionConfig(channels=args.channels, iterations=args.iters, lr=args.lr,
                       seed=args.seed, gain_window=args.gain_window)

    def progress(t, loss):
        if args.verbose and (t % 100 == 0 or t == cfg.iterations - 1):
            log.info("iteration %d  loss %.6g", t, loss)

    try:
        result = run_fusion(a, b, cfg, progress=progress)
    except DivergenceError as exc:
        raise CLIError(EXIT_DIVERGED, str(exc)) from exc
    _write_image(args.out, result.fused)
    outputs = [args.out]
    if args.loss_csv:
        _write_bytes(args.loss_csv, loss_curve_csv(result.loss_curve))
        outputs.append(args.loss_csv)
    config = cfg.to_dict()
    config.update(best_loss=result.best_loss, best_iteration=result.best_iteration,
                  resize=list(args.resize) if args.resize else None)
    _write_manifest(args.out, argv, config, args.src, outputs, started)
    log.info("fused %s (best loss %.6g at iteration %d)", args.out, result.best_loss,
             result.best_iteration)
    return EXIT_OK


def cmd_gains(args, argv) -> int:
    started = time.perf_counter()
    a, b = _load_pair(args.src, args.resize)
    gains = estimate_gains(a, b, args.gain_window)
    b1, b2 = gains.as_images()
    out1, out2 = f"{args.out_prefix}_b1.pgm", f"{args.out_prefix}_b2.pgm"
    _write_image(out1, b1)
    _write_image(out2, b2)
    _write_manifest(out1, argv, {"gain_window": args.gain_window}, args.src, [out1, out2], started)
    return EXIT_OK


def cmd_metrics(args, argv) -> int:
    f = _read(args.fused)
    a, b = (_read(p) for p in args.src)
    if not (a.shape == b.shape == f.shape):
        raise CLIError(EXIT_DIMS, "fused and source images must share dimensions")
    files = {"a": str(args.src[0]), "b": str(args.src[1]), "fused": str(args.fused)}
    try:
        report = evaluate_all(a, b, f, files=files)
    except ValueError as exc:
        raise CLIError(EXIT_DIMS, str(exc)) from exc
    for flag in report.flags:
        log.warning("metric flag: %s", flag)
    text = report.to_json() + "\n"
    if args.json in (None, "-"):
        sys.stdout.write(text)
    else:
        _write_bytes(args.json, text)
    return EXIT_OK


@dataclass
class SweepRow:
    pair: str
    channels: int
    values: tuple | None  # pe, mi, q, cv, best_loss
    seconds: float
    error: str | None = None


def read_pair_manifest(path) -> list[tuple[Path, Path]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot read pair manifest {path}: {exc}") from exc
    base = Path(path).parent
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CLIError(EXIT_USAGE, f"{path}:{lineno}: expected two paths, got {len(parts)}")
        pairs.append(tuple(p if Path(p).is_absolute() else base / p for p in map(Path, parts)))
    if not pairs:
        raise CLIError(EXIT_USAGE, f"{path}: no pairs listed")
    return pairs


def _sweep_job(pair_name, paths, channels, args) -> SweepRow:
    t0 = time.perf_counter()
    try:
        a, b = _load_pair(paths, args.resize)
        cfg = FusionConfig(channels=channels, iterations=args.iters, lr=args.lr,
                           seed=args.seed, gain_window=args.gain_window)
        res = run_fusion(a, b, cfg)
        rep = evaluate_all(a, b, res.fused)
        vals = (rep.pe, rep.mi, rep.q, rep.cv, res.best_loss)
        return SweepRow(pair_name, channels, vals, time.perf_counter() - t0)
    except (CLIError, DivergenceError, ValueError) as exc:
        log.error("pair %s, %d channels failed: %s", pair_name, channels, exc)
        return SweepRow(pair_name, channels, None, time.perf_counter() - t0, str(exc))


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def sweep_csv(rows: list[SweepRow], channel_list, timings: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        secs = _fmt(r.seconds) if timings else ""
        if r.values is None:
            w.writerow([r.pair, r.channels, "nan", "nan", "nan", "nan", "nan", secs])
        else:
            w.writerow([r.pair, r.channels, *map(_fmt, r.values), secs])
    for n in channel_list:
        ok = [r for r in rows if r.channels == n and r.values is not None]
        if ok:
            means = np.mean([r.values for r in ok], axis=0)
            secs = _fmt(float(np.mean([r.seconds for r in ok]))) if timings else ""
            w.writerow(["average", n, *map(_fmt, means), secs])
        else:
            w.writerow(["average", n, "nan", "nan", "nan", "nan", "nan", ""])
    return buf.getvalue()


def cmd_sweep(args, argv) -> int:
    started = time.perf_counter()
    pairs = read_pair_manifest(args.pairs)
    try:
        channel_list = [int(c) for c in args.channels.split(",") if c.strip()]
    except ValueError:
        raise CLIError(EXIT_USAGE, f"bad --channels list {args.channels!r}") from None
    if not channel_list or min(channel_list) < 1:
        raise CLIError(EXIT_USAGE, "--channels needs positive integers")

    jobs = []
    for i, (pa, pb) in enumerate(pairs, 1):
        name = f"{i}:{pa.stem}+{pb.stem}"
        for n in channel_list:
            jobs.append((name, (pa, pb), n))
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = [pool.submit(_sweep_job, name, paths, n, args) for name, paths, n in jobs]
        rows = [fut.result() for fut in futures]  # submission order, not completion order

    _write_bytes(args.out, sweep_csv(rows, channel_list, args.timings))
    inputs = sorted({p for _, paths, _ in jobs for p in paths} | {Path(args.pairs)})
    config = {"channels": channel_list, "iters": args.iters, "lr": args.lr, "seed": args.seed,
              "gain_window": args.gain_window, "jobs": args.jobs,
              "runs": [{"pair": r.pair, "channels": r.channels, "seconds": round(r.seconds, 3),
                        "error": r.error} for r in rows]}
    _write_manifest(args.out, argv, config, [p for p in inputs if Path(p).exists()],
                    [args.out], started)
    return EXIT_OK if any(r.values is not None for r in rows) else EXIT_DIVERGED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, resize=True):
        p.add_argument("--src", action="append", required=True, metavar="PATH",
                       help="source image (give exactly twice)")
        p.add_argument("--gain-window", type=_odd_int, default=7,
                       help="odd PCA window side (default 7)")
        if resize:
            p.add_argument("--resize", type=_parse_size, metavar="WxH",
                           help="bilinearly resize both sources first")

    p = sub.add_parser("fuse", help="fuse two source images")
    common(p)
    p.add_argument("--out", required=True, help="fused image (.pgm or .png)")
    p.add_argument("--channels", type=_positive_int, default=10, help="output channels n")
    p.add_argument("--iters", type=_positive_int, default=2000)
    p.add_argument("--lr", type=_positive_float, default=0.01, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-csv", help="write the per-iteration loss here")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gains", help="write the estimated gain maps")
    common(p)
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>_b1.pgm and <prefix>_b2.pgm")
    p.set_defaults(func=cmd_gains)

    p = sub.add_parser("metrics", help="score a fused image against its sources")
    p.add_argument("--src", action="append", required=True, metavar="PATH",
                   help="source image (give exactly twice)")
    p.add_argument("--fused", required=True, help="fused image to score")
    p.add_argument("--json", default="-", help="output path, or - for stdout")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="fuse and score every pair at several channel counts")
    p.add_argument("--pairs", required=True, help="text file, two image paths per line")
    p.add_argument("--channels", default="1,10", help="comma-separated channel counts")
    p.add_argument("--iters", type=_positive_int, default=2000)
    p.add_argument("--lr", type=_positive_float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gain-window", type=_odd_int, default=7)
    p.add_argument("--resize", type=_parse_size, metavar="WxH")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel fusion runs")
    p.add_argument("--timings", action="store_true",
                   help="fill the seconds column (makes the CSV run-dependent)")
    p.add_argument("--out", required=True, help="results CSV")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "src", None) is not None and len(args.src) != 2:
        parser.print_usage(sys.stderr)
        print(f"dipfuse: error: --src must be given exactly twice (got {len(args.src)})",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except CLIError as exc:
        log.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
