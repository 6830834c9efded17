"""Operator pairs that drive the aggregation.

An operator pair (oplus, odot) is usable whenever odot left-distributes
over oplus on the value domain [0, inf); that is what lets the backward
pass pull shared path prefixes out of the accumulation.  Three pairs are
provided: sum/product (default), max/product, and max/min.  All three
share zero (the oplus identity and odot annihilator) and one (the odot
identity).

Accumulation runs in float64 regardless of the float32 activation
storage: sums over many per-path products lose too much precision in
single precision.  Fold order is fixed (ascending arc order) so repeated
runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SEMIRING_IDS = ("sum_product", "max_product", "max_min")
SEMIRING_CODES = {name: i for i, name in enumerate(SEMIRING_IDS)}


@dataclass(frozen=True)
class Semiring:
    id: str
    oplus: Callable  # elementwise, numpy-aware
    odot: Callable
    zero: float
    one: float
    oplus_reduce: Callable  # reduce helper along one array axis

    def __repr__(self):
        return f"Semiring({self.id})"


def _reduce_with(op):
    def reduce(arr, axis):
        return op.reduce(arr, axis=axis)

    return reduce


_TABLE = {
    "sum_product": Semiring(
        "sum_product", np.add, np.multiply, 0.0, 1.0, _reduce_with(np.add)
    ),
    "max_product": Semiring(
        "max_product", np.maximum, np.multiply, 0.0, 1.0, _reduce_with(np.maximum)
    ),
    "max_min": Semiring(
        "max_min", np.maximum, np.minimum, 0.0, 1.0, _reduce_with(np.maximum)
    ),
}


def make_semiring(id: str) -> Semiring:
    """Look up one of the three built-in operator pairs.

    CLI-style spellings with dashes are accepted ("sum-product").
    """
    key = id.replace("-", "_")
    if key not in _TABLE:
        raise ValueError(f"unknown semiring {id!r}; choose from {SEMIRING_IDS}")
    return _TABLE[key]


@dataclass(frozen=True)
class LawReport:
    """Outcome of checking the operator laws on sampled triples."""

    passed: dict[str, bool]
    worst: dict[str, float]  # worst relative deviation seen per law

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def _rel_dev(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b) / scale, initial=0.0))


def check_laws(sr: Semiring, samples, rtol: float | None = None) -> LawReport:
    """Check associativity, commutativity, distributivity, identity and
    annihilator on a batch of value triples.

    Product-based pairs are compared with relative tolerance 1e-12
    (their floating-point regroupings differ in the last bits); min/max
    pairs must agree exactly.
    """
    arr = np.asarray(list(samples), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("samples must be triples")
    a, b, c = arr[:, 0], arr[:, 1], arr[:, 2]
    if rtol is None:
        rtol = 0.0 if sr.id == "max_min" else 1e-12

    checks = {
        "associativity": (sr.oplus(sr.oplus(a, b), c), sr.oplus(a, sr.oplus(b, c))),
        "commutativity": (sr.oplus(a, b), sr.oplus(b, a)),
        "distributivity": (
            sr.odot(a, sr.oplus(b, c)),
            sr.oplus(sr.odot(a, b), sr.odot(a, c)),
        ),
        "identity": (sr.odot(np.full_like(a, sr.one), a), a),
        "annihilator": (sr.odot(np.full_like(a, sr.zero), a), np.full_like(a, sr.zero)),
    }
    # zero must also be neutral for oplus; folded into the identity law.
    lhs, rhs = checks["identity"]
    checks["identity"] = (
        np.concatenate([lhs, sr.oplus(np.full_like(a, sr.zero), a)]),
        np.concatenate([rhs, a]),
    )

    passed, worst = {}, {}
    for law, (lhs, rhs) in checks.items():
        dev = _rel_dev(np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64))
        worst[law] = dev
        passed[law] = bool(dev <= rtol)
    return LawReport(passed=passed, worst=worst)
