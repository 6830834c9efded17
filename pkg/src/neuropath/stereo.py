"""Stereo application layer: score normalization, winner-take-all
readout, the stacked-feature correlation baseline, error metrics,
synthetic fixtures, and a simple left-right consistency check.

Disparity files use 16-bit big-endian PGM with value = round(256 * d)
and 0 reserved for "invalid"; ground truth is read with the same
convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import CostVolume
from .errors import EmptyEvaluationError, FormatError, LayerRangeError, ShapeError
from .grids import Grid, ShiftSet, parse_pnm, write_pnm
from .matching import shift_values
from .network import CONV, ActivationStack


@dataclass
class DisparityMap:
    values: np.ndarray  # (W, H) float32, pixels
    valid: np.ndarray  # (W, H) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ShapeError("disparity values and validity mask must be (W, H)")

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EvalReport:
    """Share of evaluated pixels whose error exceeds t pixels, per t."""

    err: dict[int, float]  # threshold -> percentage
    evaluated: int

    def lines(self) -> list[str]:
        return [f"Err_{t} {self.err[t]:.2f}" for t in sorted(self.err)]


def normalize(volume: CostVolume) -> CostVolume:
    """Divide every pixel's scores by its maximum over shifts.

    Pixels whose maximum is not positive (no path carried evidence) are
    zeroed and flagged unreliable instead of being given an arbitrary
    winner.
    """
    peak = volume.values.max(axis=2)
    dead = ~(peak > 0)
    safe = np.where(dead, 1.0, peak)
    values = volume.values / safe[:, :, None]
    values[dead] = 0.0
    return CostVolume(
        values=values,
        shift_set=volume.shift_set,
        layer_range=volume.layer_range,
        semiring_id=volume.semiring_id,
        arc_mode=volume.arc_mode,
        invalid=dead if volume.invalid is None else (dead | volume.invalid),
    )


def wta(volume: CostVolume) -> DisparityMap:
    """Per-pixel argmax over shifts; ties go to the earliest shift in
    the set (the smallest disparity for stereo sets).  Pixels flagged
    unreliable stay invalid."""
    best = np.argmax(volume.values, axis=2)
    dx = np.array([s[0] for s in volume.shift_set.shifts], dtype=np.float32)
    values = dx[best]
    valid = np.ones(best.shape, dtype=bool)
    if volume.invalid is not None:
        valid &= ~volume.invalid
    return DisparityMap(values=values, valid=valid)


def corr_baseline(
    ref: ActivationStack,
    srch: ActivationStack,
    shifts: ShiftSet,
    layer_range: tuple[int, int] | None = None,
    window: int = 1,
) -> CostVolume:
    """Stacked-feature correlation baseline.

    Pre-ReLU responses of the convolution layers in the range (pooling
    layers contribute their outputs) are nearest-neighbor upsampled to
    input resolution and stacked along channels; the score of (pixel,
    shift) is the normalized cross-correlation of the two stacked
    feature vectors, optionally widened to an odd spatial window.
    """
    s, t = layer_range if layer_range is not None else ref.range
    if not (1 <= s <= t <= len(ref.layers)):
        raise LayerRangeError(f"layer range {s}..{t} not covered by the stack")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd size")

    def stacked(stack: ActivationStack) -> np.ndarray:
        w0, h0 = stack.input.shape[0], stack.input.shape[1]
        parts = []
        scale = 1
        for index in range(1, t + 1):
            layer = stack.net.layer(index)
            act = stack.layers[index - 1]
            if layer.kind != CONV:
                scale *= layer.stride
            if index < s:
                continue
            vol = act.pre if layer.kind == CONV else act.post
            up = np.repeat(np.repeat(vol, scale, axis=0), scale, axis=1)
            parts.append(up[:w0, :h0, :].astype(np.float64))
        return np.concatenate(parts, axis=2)

    f_ref = stacked(ref)
    f_srch = stacked(srch)
    if window > 1:
        r = window // 2
        pads = ((r, r), (r, r), (0, 0))
        f_ref = _window_stack(np.pad(f_ref, pads, mode="edge"), window)
        f_srch = _window_stack(np.pad(f_srch, pads, mode="edge"), window)

    f_ref = f_ref - f_ref.mean(axis=2, keepdims=True)
    denom_ref = np.sqrt((f_ref**2).sum(axis=2))
    f_srch = f_srch - f_srch.mean(axis=2, keepdims=True)
    denom_srch = np.sqrt((f_srch**2).sum(axis=2))

    w0, h0 = f_ref.shape[0], f_ref.shape[1]
    out = np.zeros((w0, h0, len(shifts)), dtype=np.float64)
    for i, (dx, dy) in enumerate(shifts.spatial()):
        moved = shift_values(f_srch, dx, dy, 0.0)
        moved_den = shift_values(denom_srch, dx, dy, 0.0)
        num = (f_ref * moved).sum(axis=2)
        den = denom_ref * moved_den
        with np.errstate(invalid="ignore", divide="ignore"):
            ncc = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        out[..., i] = ncc
    return CostVolume(
        values=out,
        shift_set=shifts,
        layer_range=(s, t),
        semiring_id="sum_product",
        arc_mode="full",
    )


def _window_stack(padded: np.ndarray, window: int) -> np.ndarray:
    w = padded.shape[0] - window + 1
    h = padded.shape[1] - window + 1
    parts = [
        padded[a : a + w, b : b + h, :] for a in range(window) for b in range(window)
    ]
    return np.concatenate(parts, axis=2)


def err_metric(
    pred: DisparityMap, gt: DisparityMap, thresholds=(1, 2, 3, 4, 5)
) -> EvalReport:
    """Percentage of ground-truth pixels whose prediction misses by more
    than t pixels, for each threshold t.  Invalid predictions on valid
    ground truth count as errors at every threshold."""
    if pred.values.shape != gt.values.shape:
        raise ShapeError(
            f"extents differ: prediction {pred.values.shape}, truth {gt.values.shape}"
        )
    mask = gt.valid
    n = int(mask.sum())
    if n == 0:
        raise EmptyEvaluationError("no valid ground-truth pixels to evaluate")
    diff = np.abs(pred.values.astype(np.float64) - gt.values.astype(np.float64))
    diff = np.where(pred.valid, diff, np.inf)[mask]
    err = {int(t): float(100.0 * np.count_nonzero(diff > t) / n) for t in thresholds}
    return EvalReport(err=err, evaluated=n)


def make_synthetic_pair(
    extents: tuple[int, int],
    true_shift: int,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Grid, Grid, DisparityMap]:
    """Random texture plus a copy shifted left by a constant disparity.

    The searched image at column x shows the reference at x + d0, with
    the right edge replicate-filled.  Ground truth is the constant d0,
    invalid in the first d0 columns where the correspondence leaves the
    searched grid.  Optional Gaussian noise is added to the searched
    image and the result clamped back to [0, 1].
    """
    w, h = extents
    if not 0 <= true_shift < w:
        raise ValueError("true shift must be inside the image width")
    rng = np.random.default_rng(0) if rng is None else rng
    ref = rng.random((w, h, 1), dtype=np.float32)
    src_x = np.minimum(np.arange(w) + true_shift, w - 1)
    srch = ref[src_x, :, :]
    if noise > 0:
        srch = srch + rng.normal(0.0, noise, size=srch.shape).astype(np.float32)
        srch = np.clip(srch, 0.0, 1.0)
    gt_values = np.full((w, h), float(true_shift), dtype=np.float32)
    gt_valid = np.zeros((w, h), dtype=bool)
    gt_valid[true_shift:, :] = True
    return (
        Grid(ref),
        Grid(np.ascontiguousarray(srch, dtype=np.float32)),
        DisparityMap(values=gt_values, valid=gt_valid),
    )


def lr_check(
    left: DisparityMap, right: DisparityMap, tol: float = 1.0
) -> DisparityMap:
    """Invalidate left-map pixels contradicted by the right map:
    |d_L(x) - d_R(x - d_L(x))| > tol.  Pixels whose partner is outside
    the grid or itself invalid cannot be checked and are left alone."""
    if left.values.shape != right.values.shape:
        raise ShapeError("left/right disparity extents differ")
    w, h = left.values.shape
    xs = np.arange(w)[:, None]
    target = np.rint(xs - left.values).astype(np.int64)
    inside = (target >= 0) & (target < w)
    tx = np.clip(target, 0, w - 1)
    ys = np.broadcast_to(np.arange(h)[None, :], (w, h))
    partner = right.values[tx, ys]
    partner_ok = right.valid[tx, ys]
    contradicted = inside & partner_ok & (np.abs(left.values - partner) > tol)
    return DisparityMap(values=left.values.copy(), valid=left.valid & ~contradicted)


# ----------------------------------------------------------------------
# Disparity file coding (16-bit PGM, 1/256 pixel, 0 = invalid)
# ----------------------------------------------------------------------


def encode_disparity(disp: DisparityMap) -> bytes:
    coded = np.rint(disp.values.astype(np.float64) * 256.0)
    coded = np.clip(coded, 0, 65535).astype(np.uint16)
    coded[~disp.valid] = 0
    return write_pnm(coded[:, :, None], maxval=65535)


def decode_disparity(buf: bytes) -> DisparityMap:
    arr = parse_pnm(buf)
    if arr.shape[2] != 1 or arr.dtype != np.dtype(">u2"):
        raise FormatError("disparity files are 16-bit single-channel PGM")
    raw = arr[:, :, 0].astype(np.float64)
    return DisparityMap(values=(raw / 256.0).astype(np.float32), valid=raw > 0)
