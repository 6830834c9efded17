"""Batch command-line front end.

Commands:
  stereo   images -> disparity map (path aggregation or the correlation
           baseline), optional cost-volume dump
  oracle   randomized sweep-vs-enumeration verification suite
  bench    sweep runtime scaling with depth, against the path count
  eval     disparity error percentages against ground truth
  forward  per-layer activation extents and checksums, for debugging

Exit codes: 0 success, 1 verification failure, 2 usage/I-O/format/shape
errors.  All outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import zlib

import numpy as np

from . import __version__
from .aggregation import backward, count_arcs, count_paths, save_volume
from .errors import EmptyEvaluationError, NeuropathError
from .grids import Grid, ShiftSet, center_crop_multiple, load_image, to_grayscale
from .network import CONV, NetworkSpec, forward, load_weights
from .semiring import make_semiring
from .stereo import (
    corr_baseline,
    decode_disparity,
    encode_disparity,
    err_metric,
    lr_check,
    make_synthetic_pair,
    normalize,
    wta,
)
from .verify import random_case, random_conv, run_case


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _parse_synthetic(text: str) -> dict:
    out = {"d0": None, "noise": 0.0}
    for part in text.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        if key == "d0":
            out["d0"] = int(value)
        elif key == "noise":
            out["noise"] = float(value)
        else:
            raise ValueError(f"unknown synthetic option {key!r}")
    if out["d0"] is None:
        raise ValueError("--synthetic needs d0=<int>")
    return out


def _parse_layers(text: str) -> tuple[int, int]:
    s, _, t = text.partition(":")
    return int(s), int(t)


def _toy_net(rng: np.random.Generator) -> NetworkSpec:
    """Seeded 3-layer toy hierarchy for weightless synthetic runs.

    Stride-1 convolutions only: subsampling would quantize the shift and
    cloud what the synthetic fixture is meant to demonstrate.
    """
    return NetworkSpec(
        (
            random_conv(rng, 1, 2),
            random_conv(rng, 2, 2),
            random_conv(rng, 2, 2),
        )
    )


def cmd_stereo(args) -> int:
    t0 = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    gt = None
    if args.synthetic:
        opts = _parse_synthetic(args.synthetic)
        left, right, gt = make_synthetic_pair((64, 64), opts["d0"], opts["noise"], rng)
        net = load_weights(args.weights) if args.weights else _toy_net(rng)
    else:
        if not args.left or not args.right:
            print("stereo needs --left and --right (or --synthetic)", file=sys.stderr)
            return 2
        if not args.weights:
            print("stereo needs --weights", file=sys.stderr)
            return 2
        net = load_weights(args.weights)
        left = to_grayscale(load_image(args.left))
        right = to_grayscale(load_image(args.right))

    s, t = args.layers if args.layers else (1, len(net)) if len(net) < 8 else (2, 8)
    if not (1 <= s <= t <= len(net)):
        print(f"layer range {s}:{t} outside the network's 1..{len(net)}", file=sys.stderr)
        return 2
    stride = net.total_stride(t)
    left = center_crop_multiple(left, stride)
    right = center_crop_multiple(right, stride)
    t_load = time.perf_counter()

    ref = forward(net, left, s, t)
    srch = forward(net, right, s, t)
    t_fwd = time.perf_counter()

    shifts = ShiftSet.stereo(args.dmax)
    sr = make_semiring(args.semiring)
    if args.baseline == "corr":
        volume = corr_baseline(ref, srch, shifts, (s, t), window=args.window)
    else:
        volume = backward(ref, srch, shifts, sr, (s, t), arc_mode=args.arc_mode)
    t_agg = time.perf_counter()

    volume = normalize(volume)
    disparity = wta(volume)
    if args.lr_check:
        neg = ShiftSet(tuple((-d, 0, 0) for d in range(args.dmax + 1)))
        if args.baseline == "corr":
            rvol = corr_baseline(srch, ref, neg, (s, t), window=args.window)
        else:
            rvol = backward(srch, ref, neg, sr, (s, t), arc_mode=args.arc_mode)
        rdisp = wta(normalize(rvol))
        rdisp.values = -rdisp.values
        disparity = lr_check(disparity, rdisp, tol=1.0)
    t_post = time.perf_counter()

    if args.out:
        _atomic_write(args.out, encode_disparity(disparity))
    if args.volume_out:
        _atomic_write(args.volume_out, save_volume(volume))
    t_write = time.perf_counter()

    if gt is not None:
        inner = gt.valid & disparity.valid
        if inner.any():
            hit = np.abs(disparity.values - gt.values)[inner] <= 0.5
            print(f"synthetic accuracy {100.0 * hit.mean():.2f}% over {inner.sum()} px")
    print(
        "timing load={:.3f}s forward={:.3f}s aggregate={:.3f}s post={:.3f}s write={:.3f}s".format(
            t_load - t0, t_fwd - t_load, t_agg - t_fwd, t_post - t_agg, t_write - t_post
        )
    )
    return 0


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    semirings = (
        ("sum_product", "max_product", "max_min")
        if args.semiring == "all"
        else (args.semiring.replace("-", "_"),)
    )
    failures = 0
    for index in range(args.cases):
        case = random_case(rng)
        for mode in ("full", "central") if args.arc_mode == "both" else (args.arc_mode,):
            result = run_case(case, mode)
            shown = {k: v for k, v in result.max_rel.items() if k in semirings}
            worst = max(shown.values())
            ok = result.counts_equal and all(
                dev <= (0.0 if sem == "max_min" else 1e-9)
                for sem, dev in shown.items()
            )
            status = "ok" if ok else "FAIL"
            print(
                f"case {index:03d} mode={mode} paths={result.total_paths} "
                f"maxrel={worst:.3e} counts={'eq' if result.counts_equal else 'NE'} "
                f"{status} [{case.describe()}]"
            )
            if not ok:
                failures += 1
    print(f"oracle: {failures} failing case(s) out of {args.cases}")
    return 0 if failures == 0 else 1


def _bench_net(rng: np.random.Generator, depth: int, channels: int) -> NetworkSpec:
    layers = [random_conv(rng, channels, channels) for _ in range(depth)]
    layers[0] = random_conv(rng, 1, channels)
    return NetworkSpec(tuple(layers))


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    extent = 48
    channels = 4
    shifts = ShiftSet.stereo(15)
    sr = make_semiring(args.semiring)
    image_a = Grid(rng.random((extent, extent, 1), dtype=np.float32))
    image_b = Grid(rng.random((extent, extent, 1), dtype=np.float32))
    times = {}
    for depth in (2, 4, 8):
        net = _bench_net(rng, depth, channels)
        ref = forward(net, image_a, 1, depth)
        srch = forward(net, image_b, 1, depth)
        backward(ref, srch, shifts, sr, (1, depth), arc_mode=args.arc_mode)  # warm
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            backward(ref, srch, shifts, sr, (1, depth), arc_mode=args.arc_mode)
            best = min(best, time.perf_counter() - t0)
        arcs = count_arcs(net, (extent, extent), (1, depth), args.arc_mode)
        paths = int(count_paths(net, (extent, extent), (1, depth), args.arc_mode).max())
        times[depth] = best
        print(
            f"L={depth} time={best * 1e3:.1f}ms arcs={arcs} "
            f"per-arc={best / arcs * 1e9:.2f}ns max-paths-per-origin={paths}"
        )
    print(f"ratio L4/L2 = {times[4] / times[2]:.2f}")
    print(f"ratio L8/L4 = {times[8] / times[4]:.2f}")
    return 0


def cmd_eval(args) -> int:
    with open(args.pred, "rb") as fh:
        pred = decode_disparity(fh.read())
    with open(args.gt, "rb") as fh:
        gt = decode_disparity(fh.read())
    try:
        report = err_metric(pred, gt)
    except EmptyEvaluationError as exc:
        print(f"eval: {exc}", file=sys.stderr)
        return 2
    for line in report.lines():
        print(line)
    return 0


def cmd_forward(args) -> int:
    net = load_weights(args.weights)
    image = to_grayscale(load_image(args.left))
    t = args.layers[1] if args.layers else len(net)
    image = center_crop_multiple(image, net.total_stride(t))
    stack = forward(net, image, 1, t)
    print(f"input {image.width}x{image.height}x{stack.input.shape[2]}")
    for i, act in enumerate(stack.layers, start=1):
        layer = net.layer(i)
        kind = "conv" if layer.kind == CONV else "pool"
        crc = zlib.crc32(np.ascontiguousarray(act.post).tobytes())
        print(
            f"layer {i} {kind} {act.post.shape[0]}x{act.post.shape[1]}"
            f"x{act.post.shape[2]} crc32={crc:08x}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuropath",
        description="Dense correspondence by aggregating all activation paths "
        "of a convolutional hierarchy.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--semiring",
            default="sum-product",
            choices=["sum-product", "max-product", "max-min"],
        )
        p.add_argument("--arc-mode", default="full", choices=["full", "central"])

    p = sub.add_parser("stereo", help="compute a disparity map for a rectified pair")
    common(p)
    p.add_argument("--left", help="reference image (PGM/PPM)")
    p.add_argument("--right", help="searched image (PGM/PPM)")
    p.add_argument("--weights", help="NPW1 weight file")
    p.add_argument("--layers", type=_parse_layers, metavar="s:t", default=None)
    p.add_argument("--dmax", type=int, default=228)
    p.add_argument("--baseline", default="path", choices=["path", "corr"])
    p.add_argument("--window", type=int, default=1, help="corr baseline NCC window")
    p.add_argument("--out", help="disparity output (16-bit PGM)")
    p.add_argument("--volume-out", help="normalized cost volume output (NPCV)")
    p.add_argument("--synthetic", metavar="d0=K[,noise=x]")
    p.add_argument("--lr-check", action="store_true", help="run both directions")
    p.set_defaults(func=cmd_stereo)

    p = sub.add_parser("oracle", help="randomized sweep-vs-enumeration check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument(
        "--semiring",
        default="sum-product",
        choices=["sum-product", "max-product", "max-min", "all"],
    )
    p.add_argument("--arc-mode", default="both", choices=["full", "central", "both"])
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="depth-scaling benchmark")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="disparity error percentages")
    p.add_argument("pred", help="predicted disparity (16-bit PGM)")
    p.add_argument("gt", help="ground-truth disparity (16-bit PGM)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forward", help="dump activation extents and checksums")
    p.add_argument("--left", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--layers", type=_parse_layers, metavar="s:t", default=None)
    p.set_defaults(func=cmd_forward)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"{exc.strerror}: {exc.filename}", file=sys.stderr)
        return 2
    except NeuropathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
