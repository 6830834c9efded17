"""Aggregation of matching evidence over all activation path pairs.

For a layer range (s, t) the engine works on this computation graph:

* a virtual single-channel origin layer on the spatial grid of layer
  s's input, with per-pixel arcs to every channel of that input volume
  (the origin volume contributes no matching value, only topology);
* the input volume's nodes, connected into layer s by that layer's own
  geometry;
* layers s..t, where convolution nodes connect to every channel of the
  next layer within the kernel radius (clipped at borders), and pooling
  inputs connect to their single window output through an argmax gate.

``backward`` computes, for every origin pixel and shift, the oplus-sum
over all path pairs of the odot-product of per-node matching values, in
one sweep from layer t down to the virtual layer: per level only the
table of the level above is needed, because odot distributes over oplus.
``brute_force`` computes the same quantity by literally enumerating
every path pair, which is exponential in depth and exists to verify the
sweep.  ``count_paths`` runs the sweep with plain (+, x) over constant 1
to count the enumerated paths without enumerating them.

Shifts subsample as they climb: entering a layer with subsampling
factor q maps d to floor(d / q) element-wise.  Tables are indexed by the
de-duplicated image of the shift set at their level and looked up
through that mapping.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DomainError,
    FormatError,
    LayerRangeError,
    MismatchedStackError,
    PathCountOverflowError,
    TruncatedStreamError,
    UnsupportedConfigError,
    VersionError,
)
from .grids import ShiftSet
from .matching import m_conv, m_conv_table, pool_gate_mask
from .network import CONV, POOL, ActivationStack, NetworkSpec
from .semiring import SEMIRING_CODES, SEMIRING_IDS, Semiring

ARC_MODES = ("full", "central")
_INT64_MAX = 2**63 - 1


@dataclass
class CostVolume:
    """Per-origin, per-shift aggregated scores U at the resolution of
    the aggregation base (layer s's input grid)."""

    values: np.ndarray  # (W, H, |D|) float64
    shift_set: ShiftSet
    layer_range: tuple[int, int]
    semiring_id: str
    arc_mode: str
    invalid: np.ndarray | None = None  # (W, H) bool; set by normalization
    tables: list | None = field(default=None, repr=False)  # debug retention

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def shift_count(self) -> int:
        return self.values.shape[2]


def _check_stacks(ref: ActivationStack, srch: ActivationStack, s: int, t: int):
    if ref.net is not srch.net and ref.net.structure() != srch.net.structure():
        raise MismatchedStackError("stacks come from different networks")
    if ref.input.shape != srch.input.shape:
        raise MismatchedStackError(
            f"stack extents differ: {ref.input.shape} vs {srch.input.shape}"
        )
    if not (1 <= s <= t <= len(ref.layers)):
        raise LayerRangeError(
            f"layer range {s}..{t} not covered by the computed stack "
            f"(layers 1..{len(ref.layers)})"
        )


def _level_shifts(net: NetworkSpec, s: int, t: int, spatial: list[tuple[int, int]]):
    """Per-level de-duplicated shift lists and index maps.

    Level 0 is the base volume (layer s's input); level j >= 1 is layer
    s+j-1.  ``maps[j][i]`` locates the image of level-(j-1) shift i in
    the level-j list.
    """
    levels = [list(spatial)]
    maps = [None]
    for layer in net.layers[s - 1 : t]:
        q = layer.q
        mapped = [(dx // q, dy // q) for dx, dy in levels[-1]]
        dedup = list(dict.fromkeys(mapped))
        index = {d: k for k, d in enumerate(dedup)}
        maps.append(np.array([index[d] for d in mapped], dtype=np.intp))
        levels.append(dedup)
    return levels, maps


def _enter_conv(summed, layer, arc_mode, sr):
    """Fold the (W, H, Dn) channel-combined table of a convolution layer
    over its out-sets: every output position within the kernel radius,
    clipped to the grid.  Central mode keeps only the same position."""
    if arc_mode == "central":
        return summed
    kh, kw = layer.kernel
    rx, ry = kw // 2, kh // 2
    w, h = summed.shape[0], summed.shape[1]
    padded = np.pad(
        summed, ((rx, rx), (ry, ry), (0, 0)), constant_values=sr.zero
    )
    acc = None
    for b in range(kh):
        for a in range(kw):
            sl = padded[a : a + w, b : b + h, :]
            acc = sl.copy() if acc is None else sr.oplus(acc, sl)
    return acc


def _backward_block(
    ref: ActivationStack,
    srch: ActivationStack,
    spatial: list[tuple[int, int]],
    sr: Semiring,
    s: int,
    t: int,
    arc_mode: str,
    keep_tables: bool,
):
    net = ref.net
    levels, maps = _level_shifts(net, s, t, spatial)
    kept = [] if keep_tables else None

    def mu(level_j: int, table_shifts):
        layer_index = s + level_j - 1
        layer = net.layer(layer_index)
        if layer.kind == CONV:
            return m_conv_table(
                ref.volume(layer_index),
                srch.volume(layer_index),
                table_shifts,
                sr.zero,
            )
        a = ref.layers[layer_index - 1]
        return np.ones(a.post.shape + (len(table_shifts),), dtype=np.float64)

    T = t - s + 1
    table = mu(T, levels[T])
    if kept is not None:
        kept.append(table)
    for j in range(T - 1, -1, -1):
        nxt = net.layer(s + j)
        idx = maps[j + 1]
        if nxt.kind == CONV:
            summed = sr.oplus_reduce(table, axis=2)
            entered = _enter_conv(summed, nxt, arc_mode, sr)[:, :, idx]
            stepped = entered[:, :, None, :]  # same for every channel below
        else:
            q = nxt.stride
            li = s + j  # 1-based index of the pooling layer
            up = np.repeat(np.repeat(table, q, axis=0), q, axis=1)
            w, h, c = up.shape[0], up.shape[1], up.shape[2]
            stepped = np.empty((w, h, c, len(levels[j])), dtype=np.float64)
            for i, d_in in enumerate(levels[j]):
                d_out = levels[j + 1][idx[i]]
                gate = pool_gate_mask(
                    ref.layers[li - 1], srch.layers[li - 1], q, d_in, d_out
                )
                stepped[..., i] = np.where(gate, up[..., idx[i]], sr.zero)
        if j == 0:
            base = ref.volume(s - 1)
            if stepped.shape[2] == 1 and base.shape[2] > 1:
                stepped = np.broadcast_to(
                    stepped, stepped.shape[:2] + (base.shape[2], stepped.shape[3])
                )
            table = stepped
        else:
            layer = net.layer(s + j - 1)
            if layer.kind == CONV:
                table = sr.odot(mu(j, levels[j]), stepped)
            else:
                if stepped.shape[2] == 1:
                    layer_c = ref.layers[s + j - 2].post.shape[2]
                    stepped = np.broadcast_to(
                        stepped, stepped.shape[:2] + (layer_c, stepped.shape[3])
                    )
                table = np.ascontiguousarray(stepped)
        if kept is not None:
            kept.append(table)
    values = sr.oplus_reduce(table, axis=2)  # virtual layer: fold base channels
    return values, kept


def _thread_count(n_blocks: int) -> int:
    raw = os.environ.get("NEUROPATH_THREADS", "0")
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    if requested < 0:
        requested = 0
    if requested == 0:
        return 1  # auto: the numpy kernels already saturate small problems
    return max(1, min(requested, n_blocks))


# Cap on level-table entries (float64) held per shift block; two adjacent
# tables are alive at once, so this bounds the sweep's working set.
_TABLE_ENTRY_BUDGET = 1 << 25


def _shift_block_size(ref: ActivationStack, s: int, t: int) -> int:
    widest = max(
        int(np.prod(ref.volume(i).shape)) for i in range(s - 1, t + 1)
    )
    return max(1, _TABLE_ENTRY_BUDGET // max(widest, 1))


def backward(
    ref: ActivationStack,
    srch: ActivationStack,
    shifts: ShiftSet,
    sr: Semiring,
    layer_range: tuple[int, int] | None = None,
    arc_mode: str = "full",
    keep_tables: bool = False,
) -> CostVolume:
    """Aggregate matching evidence for every origin pixel and shift in
    one backward sweep; linear in nodes + arcs per shift.

    Per-shift results are independent of which other shifts are present,
    so NEUROPATH_THREADS > 1 splits the shift set across worker threads
    without changing any value.
    """
    s, t = layer_range if layer_range is not None else ref.range
    _check_stacks(ref, srch, s, t)
    if arc_mode not in ARC_MODES:
        raise ValueError(f"arc_mode must be one of {ARC_MODES}")
    if arc_mode == "central":
        for layer in ref.net.layers[s - 1 : t]:
            if layer.kind == CONV and layer.stride != 1:
                raise UnsupportedConfigError("central arcs need stride-1 convolutions")
    spatial = shifts.spatial()
    requested = _thread_count(len(spatial))
    mem_block = _shift_block_size(ref, s, t)
    want_blocks = max(-(-len(spatial) // mem_block), requested) if spatial else 1
    block = max(1, -(-len(spatial) // want_blocks)) if spatial else 1
    blocks = [spatial[i : i + block] for i in range(0, len(spatial), block)]
    threads = min(requested, len(blocks))
    if keep_tables or len(blocks) <= 1:
        values, kept = _backward_block(
            ref, srch, spatial, sr, s, t, arc_mode, keep_tables
        )
    elif threads == 1:
        parts = [
            _backward_block(ref, srch, blk, sr, s, t, arc_mode, False)[0]
            for blk in blocks
        ]
        values = np.concatenate(parts, axis=2)
        kept = None
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(
                    _backward_block, ref, srch, blk, sr, s, t, arc_mode, False
                )
                for blk in blocks
            ]
            values = np.concatenate([f.result()[0] for f in futures], axis=2)
        kept = None
    # negative or non-finite scores mean the stacks carried values the
    # matching functions never produce (e.g. pre-ReLU data)
    if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0:
        raise DomainError("aggregation produced non-finite or negative scores")
    if sr.id == "max_min" and values.max(initial=0.0) > 1.0:
        raise DomainError("max/min scores exceeded 1")
    return CostVolume(
        values=values,
        shift_set=shifts,
        layer_range=(s, t),
        semiring_id=sr.id,
        arc_mode=arc_mode,
        tables=kept,
    )


# ----------------------------------------------------------------------
# Brute-force enumeration oracle
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class BruteForceResult:
    volume: CostVolume
    path_counts: np.ndarray  # (W, H) int64, structural paths per origin


def _mapped_shift_chain(net, s, t, spatial):
    """mapped[j][i]: original shift i carried to level j (0 = base)."""
    mapped = [list(spatial)]
    for layer in net.layers[s - 1 : t]:
        q = layer.q
        mapped.append([(dx // q, dy // q) for dx, dy in mapped[-1]])
    return mapped


def brute_force(
    ref: ActivationStack,
    srch: ActivationStack,
    shifts: ShiftSet,
    sr: Semiring,
    layer_range: tuple[int, int] | None = None,
    arc_mode: str = "full",
) -> BruteForceResult:
    """Compute the same scores as ``backward`` by walking every path
    pair and folding its matching values directly.  Exponential in the
    layer count; meant for verification on toy networks only."""
    s, t = layer_range if layer_range is not None else ref.range
    _check_stacks(ref, srch, s, t)
    if sr.id not in SEMIRING_IDS:
        raise ValueError(f"brute force supports the built-in semirings, not {sr.id!r}")
    per_path_min = sr.id == "max_min"
    accumulate_max = sr.id != "sum_product"

    net = ref.net
    mapped = _mapped_shift_chain(net, s, t, shifts.spatial())
    n_shifts = len(shifts)
    T = t - s + 1
    base = ref.volume(s - 1)
    w0, h0, c0 = base.shape

    ref_posts = [None] + [ref.volume(s + j - 1) for j in range(1, T + 1)]
    srch_posts = [None] + [srch.volume(s + j - 1) for j in range(1, T + 1)]
    layer_of = [None] + [net.layer(s + j - 1) for j in range(1, T + 1)]

    out = np.zeros((w0, h0, n_shifts), dtype=np.float64)
    counts = np.zeros((w0, h0), dtype=np.int64)
    count_box = [0]

    def node_factors(j, x, y, c):
        layer = layer_of[j]
        if layer.kind != CONV:
            return None  # pooled nodes carry no matching value
        rp = ref_posts[j]
        sp = srch_posts[j]
        w, h = rp.shape[0], rp.shape[1]
        rv = float(rp[x, y, c])
        factors = []
        for i in range(n_shifts):
            dx, dy = mapped[j][i]
            sx, sy = x - dx, y - dy
            if 0 <= sx < w and 0 <= sy < h:
                factors.append(m_conv(rv, float(sp[sx, sy, c])))
            else:
                factors.append(0.0)
        return factors

    def pool_gate_factors(j, x, y, c):
        """Gate of the arc from level j-1 position (x, y, c) into the
        pooling layer at level j."""
        layer_index = s + j - 1
        q = layer_of[j].stride
        ra = ref.layers[layer_index - 1]
        sa = srch.layers[layer_index - 1]
        w, h = ra.is_argmax.shape[0], ra.is_argmax.shape[1]
        factors = []
        for i in range(n_shifts):
            dxi, dyi = mapped[j - 1][i]
            dxo, dyo = mapped[j][i]
            sx, sy = x - dxi, y - dyi
            ok = (
                bool(ra.is_argmax[x, y, c])
                and 0 <= sx < w
                and 0 <= sy < h
                and bool(sa.is_argmax[sx, sy, c])
                and sx // q == x // q - dxo
                and sy // q == y // q - dyo
            )
            factors.append(1.0 if ok else 0.0)
        return factors

    def walk(j, x, y, c, prods, mins, ox, oy):
        if j == T:
            counts[ox, oy] += 1
            count_box[0] += 1
            if count_box[0] > _INT64_MAX:
                raise PathCountOverflowError("enumerated path count exceeds 64 bits")
            vals = mins if per_path_min else prods
            if accumulate_max:
                for i in range(n_shifts):
                    if vals[i] > out[ox, oy, i]:
                        out[ox, oy, i] = vals[i]
            else:
                for i in range(n_shifts):
                    out[ox, oy, i] += vals[i]
            return
        nxt = layer_of[j + 1]
        if nxt.kind == CONV:
            w, h = ref_posts[j + 1].shape[0], ref_posts[j + 1].shape[1]
            if arc_mode == "central":
                xs = [x]
                ys = [y]
            else:
                kh, kw = nxt.kernel
                rx_, ry_ = kw // 2, kh // 2
                xs = range(max(0, x - rx_), min(w, x + rx_ + 1))
                ys = range(max(0, y - ry_), min(h, y + ry_ + 1))
            for nc in range(nxt.out_channels):
                for nx in xs:
                    for ny in ys:
                        f = node_factors(j + 1, nx, ny, nc)
                        walk(
                            j + 1,
                            nx,
                            ny,
                            nc,
                            [prods[i] * f[i] for i in range(n_shifts)],
                            [min(mins[i], f[i]) for i in range(n_shifts)],
                            ox,
                            oy,
                        )
        else:
            q = nxt.stride
            g = pool_gate_factors(j + 1, x, y, c)
            walk(
                j + 1,
                x // q,
                y // q,
                c,
                [prods[i] * g[i] for i in range(n_shifts)],
                [min(mins[i], g[i]) for i in range(n_shifts)],
                ox,
                oy,
            )

    ones = [1.0] * n_shifts
    for ox in range(w0):
        for oy in range(h0):
            for c in range(c0):
                # virtual origin -> per-pixel arc to base channel c,
                # both carrying the odot identity
                walk(0, ox, oy, c, list(ones), list(ones), ox, oy)

    volume = CostVolume(
        values=out,
        shift_set=shifts,
        layer_range=(s, t),
        semiring_id=sr.id,
        arc_mode=arc_mode,
    )
    return BruteForceResult(volume=volume, path_counts=counts)


# ----------------------------------------------------------------------
# Path counting (the same sweep over (+, x) and constant 1)
# ----------------------------------------------------------------------


def count_paths(
    net: NetworkSpec,
    extents: tuple[int, int],
    layer_range: tuple[int, int] | None = None,
    arc_mode: str = "full",
) -> np.ndarray:
    """Structural path-pair count per origin pixel, (W, H) int64.

    Runs the backward recursion with both operators replaced by plain
    integer arithmetic over the constant 1, demonstrating that the same
    distributive sweep counts in linear time what enumeration cannot.
    """
    if layer_range is None:
        layer_range = (1, len(net))
    s, t = layer_range
    if not (1 <= s <= t <= len(net)):
        raise LayerRangeError(f"layer range {s}..{t} outside 1..{len(net)}")
    w, h = extents
    sizes = [(w, h)]
    chans = [net.layer(s).in_channels]
    for layer in net.layers[s - 1 : t]:
        pw, ph = sizes[-1]
        if layer.kind == POOL and (pw % layer.stride or ph % layer.stride):
            raise LayerRangeError(
                f"extent {pw}x{ph} not divisible by pooling stride {layer.stride}"
            )
        sizes.append((pw // layer.q, ph // layer.q))
        chans.append(layer.out_channels)

    T = t - s + 1
    tw, th = sizes[T]
    counts = np.ones((tw, th, chans[T]), dtype=np.int64)
    for j in range(T - 1, -1, -1):
        nxt = net.layer(s + j)
        if nxt.kind == CONV:
            kh, kw = nxt.kernel
            fanout_bound = (1 if arc_mode == "central" else kh * kw) * nxt.out_channels
            if int(counts.max()) > _INT64_MAX // max(fanout_bound, 1):
                raise PathCountOverflowError("path count exceeds 64-bit range")
            summed = counts.sum(axis=2, dtype=np.int64)[:, :, None]
            if arc_mode == "central":
                entered = summed
            else:
                rx, ry = kw // 2, kh // 2
                jw, jh = sizes[j]
                padded = np.pad(summed, ((rx, rx), (ry, ry), (0, 0)))
                entered = np.zeros((jw, jh, 1), dtype=np.int64)
                for b in range(kh):
                    for a in range(kw):
                        entered += padded[a : a + jw, b : b + jh, :]
            counts = np.broadcast_to(entered, (entered.shape[0], entered.shape[1], chans[j]))
        else:
            q = nxt.stride
            counts = np.repeat(np.repeat(counts, q, axis=0), q, axis=1)
    if int(counts.max()) > _INT64_MAX // max(chans[0], 1):
        raise PathCountOverflowError("path count exceeds 64-bit range")
    return counts.sum(axis=2, dtype=np.int64)


def aggregation_reach(
    net: NetworkSpec, layer_range: tuple[int, int] | None = None
) -> tuple[int, int]:
    """Horizontal/vertical dependency radius of one cost-volume entry,
    in base-grid pixels: activation receptive field plus the sweep's own
    fold windows plus pooling granularity.  Border effects (clipped
    out-sets, replicate padding) cannot reach past this; useful for
    choosing interior margins when comparing volumes.
    """
    if layer_range is None:
        layer_range = (1, len(net))
    s, t = layer_range
    rx, ry = net.receptive_radius(t)
    reach_x, reach_y = rx, ry
    scale = 1
    for layer in net.layers[s - 1 : t]:
        if layer.kind == CONV:
            reach_x += (layer.kernel[1] // 2) * scale
            reach_y += (layer.kernel[0] // 2) * scale
        else:
            scale *= layer.stride
    return reach_x + scale, reach_y + scale


def count_arcs(
    net: NetworkSpec,
    extents: tuple[int, int],
    layer_range: tuple[int, int] | None = None,
    arc_mode: str = "full",
) -> int:
    """Total arcs of the aggregation graph, virtual arcs included;
    ``extents`` are the base-grid (layer s input) extents."""
    if layer_range is None:
        layer_range = (1, len(net))
    s, t = layer_range
    w, h = extents
    total = w * h * net.layer(s).in_channels  # virtual fan-out
    cw, ch = w, h
    cin = net.layer(s).in_channels
    for layer in net.layers[s - 1 : t]:
        if layer.kind == CONV:
            kh, kw = layer.kernel
            if arc_mode == "central":
                per_node = layer.out_channels
            else:
                # clipped window sizes summed over the grid, per axis
                wx = sum(
                    min(cw - 1, x + kw // 2) - max(0, x - kw // 2) + 1 for x in range(cw)
                )
                wy = sum(
                    min(ch - 1, y + kh // 2) - max(0, y - kh // 2) + 1 for y in range(ch)
                )
                total += wx * wy * cin * layer.out_channels
                cin = layer.out_channels
                continue
            total += cw * ch * cin * per_node
        else:
            total += cw * ch * cin
            cw, ch = cw // layer.stride, ch // layer.stride
        cin = layer.out_channels
    return total


# ----------------------------------------------------------------------
# NPCV cost-volume container format
# ----------------------------------------------------------------------

_NPCV_MAGIC = b"NPCV"
_NPCV_VERSION = 1
_ARC_CODES = {"full": 0, "central": 1}
_ARC_NAMES = {v: k for k, v in _ARC_CODES.items()}


def save_volume(vol: CostVolume) -> bytes:
    """Serialize to NPCV: header, then float32 values in x-major order
    (x slowest, then y, then shift)."""
    head = _NPCV_MAGIC + struct.pack(
        "<IIIIBBII",
        _NPCV_VERSION,
        vol.height,
        vol.width,
        vol.shift_count,
        SEMIRING_CODES[vol.semiring_id],
        _ARC_CODES[vol.arc_mode],
        vol.layer_range[0],
        vol.layer_range[1],
    )
    return head + np.ascontiguousarray(vol.values, dtype="<f4").tobytes()


_NPCV_HEADER = struct.calcsize("<IIIIBBII")  # after the 4 magic bytes


def load_volume(buf: bytes) -> CostVolume:
    if buf[:4] != _NPCV_MAGIC:
        raise BadMagicError(f"expected {_NPCV_MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < 4 + _NPCV_HEADER:
        raise TruncatedStreamError("NPCV header incomplete")
    version, h, w, d, sem, arc, s, t = struct.unpack(
        "<IIIIBBII", buf[4 : 4 + _NPCV_HEADER]
    )
    if version != _NPCV_VERSION:
        raise VersionError(f"unsupported NPCV version {version}")
    if sem >= len(SEMIRING_IDS) or arc not in _ARC_NAMES:
        raise FormatError("unknown semiring or arc-mode code")
    expected = w * h * d * 4
    start = 4 + _NPCV_HEADER
    raw = buf[start : start + expected]
    if len(raw) != expected:
        raise TruncatedStreamError(f"NPCV payload has {len(raw)} of {expected} bytes")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(w, h, d)
    # The container stores the shift count, not the vectors; the stereo
    # pipeline's sets are index = horizontal displacement.
    return CostVolume(
        values=values,
        shift_set=ShiftSet(tuple((i, 0, 0) for i in range(d))),
        layer_range=(s, t),
        semiring_id=SEMIRING_IDS[sem],
        arc_mode=_ARC_NAMES[arc],
    )
