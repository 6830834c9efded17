"""Per-neuron matching functions.

Convolution activations are compared by the ratio min/max, which is 1
for identical positive responses, decays toward 0 as they diverge, and
is 0 when either side is silent.  Max-pooling contributes no values of
its own; its arcs are gated on whether both sides routed the window
through the same (shifted) argmax position.  The virtual origin layer
contributes the odot identity, i.e. no evidence, only topology.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .network import LayerActivation
from .semiring import Semiring


def m_conv(w: float, v: float) -> float:
    """Match two post-ReLU scalars: min/max, with 0 when both are 0."""
    if w < 0 or v < 0:
        raise DomainError(
            f"matching needs nonnegative (post-ReLU) inputs, got ({w}, {v})"
        )
    hi = max(w, v)
    if hi == 0.0:
        return 0.0
    return min(w, v) / hi


def m_virtual(sr: Semiring) -> float:
    """Matching value of the virtual origin layer: the odot identity."""
    return sr.one


def shift_values(arr: np.ndarray, dx: int, dy: int, fill: float) -> np.ndarray:
    """Return S with S[x, y] = arr[x - dx, y - dy], out-of-range -> fill.

    Works on (W, H, ...) arrays; trailing axes ride along.
    """
    w, h = arr.shape[0], arr.shape[1]
    out = np.full_like(arr, fill)
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys = slice(max(dy, 0), h + min(dy, 0))
    if xs.start >= xs.stop or ys.start >= ys.stop:
        return out
    src_xs = slice(max(-dx, 0), w + min(-dx, 0))
    src_ys = slice(max(-dy, 0), h + min(-dy, 0))
    out[xs, ys] = arr[src_xs, src_ys]
    return out


def m_conv_table(
    ref_post: np.ndarray, srch_post: np.ndarray, shifts, zero: float
) -> np.ndarray:
    """Vectorized m_conv over a whole layer for a list of (dx, dy) shifts.

    Output is (W, H, C, len(shifts)) float64.  Reference positions whose
    searched counterpart x - d falls off the grid get the semiring zero:
    such paths carry no evidence.
    """
    w, h, c = ref_post.shape
    ref = ref_post.astype(np.float64)
    srch = srch_post.astype(np.float64)
    out = np.empty((w, h, c, len(shifts)), dtype=np.float64)
    for i, (dx, dy) in enumerate(shifts):
        shifted = shift_values(srch, dx, dy, np.nan)
        hi = np.maximum(ref, shifted)
        lo = np.minimum(ref, shifted)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 0.0)
        m = np.where(np.isnan(shifted), zero, m)
        out[..., i] = m
    return out


def pool_gate_mask(
    ref_layer: LayerActivation,
    srch_layer: LayerActivation,
    q: int,
    d_in: tuple[int, int],
    d_out: tuple[int, int],
) -> np.ndarray:
    """Boolean gate for every pooling arc at shift d_in.

    Entry [x, y, c] is True iff the arc from input position (x, y) into
    its window is active on both sides: the reference argmax of that
    window is (x, y), and the searched argmax of the window paired by
    the subsampled shift d_out is exactly (x, y) - d_in.  Searched
    windows outside the grid gate to False.
    """
    ref_on = ref_layer.is_argmax
    srch_on = shift_values(srch_layer.is_argmax, d_in[0], d_in[1], False)
    # The searched position must actually lie in the paired window:
    # floor((x - dx) / q) == floor(x / q) - dox, per axis.
    w, h = ref_on.shape[0], ref_on.shape[1]
    ax = np.arange(w)
    ay = np.arange(h)
    ok_x = (ax - d_in[0]) // q == ax // q - d_out[0]
    ok_y = (ay - d_in[1]) // q == ay // q - d_out[1]
    return ref_on & srch_on & ok_x[:, None, None] & ok_y[None, :, None]
