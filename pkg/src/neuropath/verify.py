"""Randomized equivalence suite: the linear-time sweep against literal
path enumeration, on small random networks and image pairs.

Used both by the ``oracle`` CLI command and by the acceptance tests.
Product-based semirings must agree within 1e-9 relative (their floating
point regroupings differ), the max/min pair exactly.  Structural path
counts from enumeration must equal the linear-time count on every case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import backward, brute_force, count_paths
from .grids import Grid, ShiftSet
from .network import CONV, POOL, LayerSpec, NetworkSpec, forward
from .semiring import SEMIRING_IDS, make_semiring

REL_TOL = 1e-9


@dataclass(frozen=True)
class OracleCase:
    net: NetworkSpec
    extents: tuple[int, int]
    layer_range: tuple[int, int]
    shifts: ShiftSet
    images: tuple[Grid, Grid]

    def describe(self) -> str:
        kinds = "".join("c" if l.kind == CONV else "p" for l in self.net.layers)
        return (
            f"net={kinds} extents={self.extents[0]}x{self.extents[1]} "
            f"range={self.layer_range[0]}:{self.layer_range[1]} "
            f"shifts={list(self.shifts.spatial())}"
        )


@dataclass(frozen=True)
class CaseResult:
    case: OracleCase
    arc_mode: str
    max_rel: dict[str, float]  # semiring id -> worst relative deviation
    counts_equal: bool
    total_paths: int

    def within_tolerance(self) -> bool:
        if not self.counts_equal:
            return False
        for sem, dev in self.max_rel.items():
            limit = 0.0 if sem == "max_min" else REL_TOL
            if dev > limit:
                return False
        return True


def random_conv(rng: np.random.Generator, cin: int, cout: int, kernel=3) -> LayerSpec:
    w = rng.normal(0.0, 0.6, size=(cout, cin, kernel, kernel)).astype(np.float32)
    b = rng.uniform(-0.3, 0.1, size=cout).astype(np.float32)
    return LayerSpec(
        kind=CONV, in_channels=cin, out_channels=cout, kernel=(kernel, kernel),
        stride=1, weights=w, bias=b,
    )


def random_pool(channels: int, q: int = 2) -> LayerSpec:
    return LayerSpec(
        kind=POOL, in_channels=channels, out_channels=channels, kernel=(q, q), stride=q
    )


def random_case(rng: np.random.Generator, max_paths: int = 6000) -> OracleCase:
    """Draw a toy configuration whose structural path total stays small
    enough for enumeration (layers <= 4, channels <= 3, extents <= 8,
    at most 4 shifts)."""
    while True:
        depth = int(rng.integers(1, 5))
        kinds = []
        pools = 0
        for i in range(depth):
            if pools < 2 and rng.random() < 0.35:
                kinds.append(POOL)
                pools += 1
            else:
                kinds.append(CONV)
        stride_total = 2**pools
        mult = max(1, 8 // stride_total)
        w = stride_total * int(rng.integers(1, mult + 1))
        h = stride_total * int(rng.integers(1, mult + 1))
        cin = int(rng.integers(1, 3))
        layers = []
        c = cin
        for kind in kinds:
            if kind == POOL:
                layers.append(random_pool(c))
            else:
                cout = int(rng.integers(1, 4))
                kernel = 3 if rng.random() < 0.8 else 1
                layers.append(random_conv(rng, c, cout, kernel))
                c = cout
        net = NetworkSpec(tuple(layers))
        s = 1 if rng.random() < 0.7 else int(rng.integers(1, depth + 1))
        t = depth
        n_shifts = int(rng.integers(1, 5))
        shifts = [(0, 0, 0)]
        while len(shifts) < n_shifts:
            cand = (int(rng.integers(-3, 4)), int(rng.integers(-1, 2)), 0)
            if cand not in shifts:
                shifts.append(cand)
        shift_set = ShiftSet(tuple(shifts))

        base_w = w // net.total_stride(s - 1)
        base_h = h // net.total_stride(s - 1)
        if base_w < 1 or base_h < 1:
            continue
        try:
            total = int(count_paths(net, (base_w, base_h), (s, t)).sum())
        except Exception:
            continue
        if total == 0 or total > max_paths:
            continue

        img_ref = rng.random((w, h, cin)).astype(np.float32)
        img_srch = rng.random((w, h, cin)).astype(np.float32)
        # sprinkle exact zeros so the both-silent matching case occurs
        img_ref[rng.random(img_ref.shape) < 0.15] = 0.0
        img_srch[rng.random(img_srch.shape) < 0.15] = 0.0
        return OracleCase(
            net=net,
            extents=(w, h),
            layer_range=(s, t),
            shifts=shift_set,
            images=(Grid(img_ref), Grid(img_srch)),
        )


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    dev = np.abs(a - b) / scale
    dev[(a == 0) & (b == 0)] = 0.0
    return float(dev.max(initial=0.0))


def run_case(case: OracleCase, arc_mode: str) -> CaseResult:
    s, t = case.layer_range
    ref = forward(case.net, case.images[0], s, t)
    srch = forward(case.net, case.images[1], s, t)
    base_w = ref.volume(s - 1).shape[0]
    base_h = ref.volume(s - 1).shape[1]
    expected_counts = count_paths(
        case.net, (base_w, base_h), (s, t), arc_mode=arc_mode
    )
    max_rel = {}
    counts_equal = True
    total = 0
    for sem in SEMIRING_IDS:
        sr = make_semiring(sem)
        fast = backward(ref, srch, case.shifts, sr, (s, t), arc_mode=arc_mode)
        slow = brute_force(ref, srch, case.shifts, sr, (s, t), arc_mode=arc_mode)
        max_rel[sem] = relative_deviation(fast.values, slow.volume.values)
        counts_equal &= bool(np.array_equal(slow.path_counts, expected_counts))
        total = int(slow.path_counts.sum())
    return CaseResult(
        case=case,
        arc_mode=arc_mode,
        max_rel=max_rel,
        counts_equal=counts_equal,
        total_paths=total,
    )


def run_suite(seed: int, cases: int = 50, arc_modes=("full", "central")):
    """Generate and run the randomized suite; yields CaseResult."""
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        case = random_case(rng)
        for mode in arc_modes:
            yield run_case(case, mode)
