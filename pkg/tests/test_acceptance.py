"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line at its stated tolerance (run with ``pytest -s`` to see them).

Dataset-scale quality numbers are intentionally out of scope here; the
criteria are property-based plus synthetic end-to-end checks.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from neuropath import (
    Grid,
    NetworkSpec,
    Semiring,
    ShiftSet,
    SubsampleChain,
    aggregation_reach,
    backward,
    check_laws,
    count_paths,
    forward,
    m_conv,
    make_semiring,
    make_synthetic_pair,
    normalize,
    save_volume,
    save_weights,
    subsample_shift,
    wta,
)
from neuropath import DisparityMap, err_metric
from neuropath.verify import REL_TOL, random_conv, run_suite
from golden_fixtures import golden_net, golden_volume_inputs
from helpers import toy_net
from test_network import naive_conv

GOLDEN = Path(__file__).parent / "golden"
SUM = make_semiring("sum_product")


def passed(name: str):
    print(f"ACCEPTANCE PASS: {name}")


@pytest.fixture(scope="module")
def oracle_results():
    t0 = time.perf_counter()
    results = list(run_suite(seed=20240, cases=50, arc_modes=("full", "central")))
    elapsed = time.perf_counter() - t0
    return results, elapsed


class TestOracleEquivalence:
    def test_backward_equals_enumeration_on_50_cases(self, oracle_results):
        results, elapsed = oracle_results
        assert len(results) == 100  # 50 cases x 2 arc modes
        for r in results:
            for sem, dev in r.max_rel.items():
                limit = 0.0 if sem == "max_min" else REL_TOL
                assert dev <= limit, (r.case.describe(), r.arc_mode, sem, dev)
        assert elapsed < 60.0, f"oracle suite took {elapsed:.1f}s"
        passed(
            f"oracle equivalence (50 cases, 3 semirings, 2 arc modes, {elapsed:.1f}s)"
        )


class TestPathCounts:
    def test_enumerated_counts_match_linear_count(self, oracle_results):
        results, _ = oracle_results
        assert all(r.counts_equal for r in results)
        passed("path-count agreement on every oracle case")

    def test_two_conv_chain_interior_81(self):
        rng = np.random.default_rng(5)
        net = NetworkSpec((random_conv(rng, 1, 1), random_conv(rng, 1, 1)))
        counts = count_paths(net, (8, 8), (1, 2))
        assert counts[3, 3] == counts[4, 4] == 81
        passed("uniform two-conv chain: 81 paths per interior origin")


class TestSemiringLaws:
    def test_laws_on_thousand_triples(self):
        rng = np.random.default_rng(99)
        triples = rng.random((1000, 3))
        for name in ("sum_product", "max_product", "max_min"):
            report = check_laws(make_semiring(name), triples)
            assert report.all_passed, (name, report)
        broken = Semiring(
            id="sum_max",
            oplus=np.add,
            odot=np.maximum,
            zero=0.0,
            one=0.0,
            oplus_reduce=lambda arr, axis: np.add.reduce(arr, axis=axis),
        )
        assert not check_laws(broken, triples).passed["distributivity"]
        passed("semiring laws (1000 triples each; broken pair caught)")


class TestMatchingProperties:
    def test_ten_thousand_random_pairs(self):
        rng = np.random.default_rng(7)
        w = rng.random(10_000) * rng.choice([0.0, 1.0, 10.0], size=10_000)
        v = rng.random(10_000) * rng.choice([0.0, 1.0, 10.0], size=10_000)
        for wi, vi in zip(w, v):
            a = m_conv(wi, vi)
            assert a == m_conv(vi, wi)
            assert 0.0 <= a <= 1.0
            b = m_conv(3.7 * wi, 3.7 * vi)
            assert a == pytest.approx(b, rel=1e-9, abs=1e-12)
            if wi == 0.0 and vi == 0.0:
                assert a == 0.0
        assert m_conv(0.0, 0.0) == 0.0
        passed("neuron matching properties on 10^4 pairs")


class TestSubsampling:
    def test_composition_and_terminal_value(self):
        chain = SubsampleChain((1, 1, 2, 1, 1, 2, 1, 1))
        for d in range(-512, 513):
            shift = (d, 0, 0)
            for mid in (0, 2, 3, 5, 8):
                via = subsample_shift(
                    chain, mid, 8, subsample_shift(chain, 0, mid, shift)
                )
                assert via == subsample_shift(chain, 0, 8, shift)
        assert subsample_shift(chain, 0, 8, (228, 0, 0)) == (57, 0, 0)
        passed("shift subsampling composition on d in [-512, 512]; 228 -> 57")


class TestForwardCorrectness:
    def test_twenty_random_cases_vs_naive(self):
        rng = np.random.default_rng(11)
        from neuropath import CONV, LayerSpec

        for _ in range(20):
            cin = int(rng.integers(1, 3))
            cout = int(rng.integers(1, 3))
            w = rng.normal(size=(cout, cin, 3, 3)).astype(np.float32)
            b = rng.normal(size=cout).astype(np.float32)
            net = NetworkSpec((LayerSpec(CONV, cin, cout, (3, 3), 1, w, b),))
            img = rng.random((6, 5, cin)).astype(np.float32)
            got = forward(net, Grid(img)).layers[0].pre
            np.testing.assert_allclose(got, naive_conv(img, w, b), rtol=1e-5, atol=1e-6)
        passed("forward matches naive reference on 20 cases (rtol 1e-5)")

    def test_replicate_padding_constant_image(self):
        rng = np.random.default_rng(12)
        net = toy_net(rng, "cc", cmax=3)
        stack = forward(net, Grid(np.full((9, 7, 1), 0.6, dtype=np.float32)))
        for act in stack.layers:
            for c in range(act.post.shape[2]):
                plane = act.post[:, :, c]
                assert np.all(plane == plane[0, 0])
        passed("replicate padding keeps constant images exactly constant")


def _toy3(rng):
    return NetworkSpec(
        (random_conv(rng, 1, 2), random_conv(rng, 2, 2), random_conv(rng, 2, 2))
    )


def _synthetic_accuracy(noise: float, seed: int) -> float:
    rng = np.random.default_rng(seed)
    net = _toy3(rng)
    ref_img, srch_img, gt = make_synthetic_pair((64, 64), 7, noise, rng)
    ref = forward(net, ref_img)
    srch = forward(net, srch_img)
    vol = backward(ref, srch, ShiftSet.stereo(15), SUM, (1, 3))
    disp = wta(normalize(vol))
    rx, ry = net.receptive_radius()
    interior = np.zeros((64, 64), dtype=bool)
    interior[15 + rx : 64 - rx, ry : 64 - ry] = True
    sel = interior & gt.valid & disp.valid
    return float((np.abs(disp.values - gt.values)[sel] <= 0.5).mean())


class TestSyntheticEndToEnd:
    def test_constant_shift_recovery_and_noise_monotonicity(self):
        t0 = time.perf_counter()
        acc_clean = _synthetic_accuracy(0.0, seed=4242)
        assert acc_clean >= 0.95, acc_clean
        means = []
        for noise in (0.0, 0.05, 0.10):
            accs = [_synthetic_accuracy(noise, seed=5000 + k) for k in range(10)]
            means.append(float(np.mean(accs)))
        assert means[0] >= means[1] >= means[2], means
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"synthetic suite took {elapsed:.1f}s"
        passed(
            "synthetic end-to-end: {:.1f}% clean accuracy; noise means {} ({:.1f}s)".format(
                100 * acc_clean, [f"{100 * m:.1f}%" for m in means], elapsed
            )
        )


class TestLinearity:
    @staticmethod
    def _bench_once(depth: int, rng) -> tuple[float, int]:
        # extent large enough that per-layer work dominates constant
        # overhead; otherwise the shallow runs bottom out on noise
        channels, extent = 4, 48
        layers = [random_conv(rng, 1, channels)] + [
            random_conv(rng, channels, channels) for _ in range(depth - 1)
        ]
        net = NetworkSpec(tuple(layers))
        a = Grid(rng.random((extent, extent, 1), dtype=np.float32))
        b = Grid(rng.random((extent, extent, 1), dtype=np.float32))
        ref = forward(net, a, 1, depth)
        srch = forward(net, b, 1, depth)
        shifts = ShiftSet.stereo(15)  # |D| = 16
        backward(ref, srch, shifts, SUM, (1, depth))  # warm-up
        best = min(
            _timed(lambda: backward(ref, srch, shifts, SUM, (1, depth)))
            for _ in range(5)
        )
        peak = int(count_paths(net, (extent, extent), (1, depth)).max())
        return best, peak

    def test_runtime_linear_while_paths_explode(self):
        rng = np.random.default_rng(31)
        times, peaks = {}, {}
        for depth in (2, 4, 8):
            times[depth], peaks[depth] = self._bench_once(depth, rng)
        r42 = times[4] / times[2]
        r84 = times[8] / times[4]
        assert r42 <= 2.5, (times, r42)
        assert r84 <= 2.5, (times, r84)
        assert peaks[4] / peaks[2] > 4.0
        assert peaks[8] / peaks[4] > 4.0
        passed(
            f"linearity: time ratios {r42:.2f}, {r84:.2f} <= 2.5; "
            f"peak path counts {peaks[2]} -> {peaks[4]} -> {peaks[8]}"
        )


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


class TestTranslationEquivariance:
    def test_exact_on_five_fixtures(self):
        from neuropath.verify import random_pool

        for seed in range(5):
            rng = np.random.default_rng(600 + seed)
            if seed % 2:
                net = NetworkSpec(
                    (
                        random_conv(rng, 1, 1),
                        random_pool(1),
                        random_conv(rng, 1, 2),
                        random_pool(2),
                    )
                )
            else:
                net = NetworkSpec(
                    (random_conv(rng, 1, 2), random_pool(2), random_conv(rng, 2, 2))
                )
            q = net.total_stride()
            delta = q
            w, h, d_max = 64, 16, 3
            big_ref = rng.random((w + delta, h, 1), dtype=np.float32)
            big_srch = rng.random((w + delta, h, 1), dtype=np.float32)
            pair1 = (
                Grid(np.ascontiguousarray(big_ref[delta:])),
                Grid(np.ascontiguousarray(big_srch[delta:])),
            )
            pair2 = (
                Grid(np.ascontiguousarray(big_ref[:w])),
                Grid(np.ascontiguousarray(big_srch[:w])),
            )
            depth = len(net.layers)
            shifts = ShiftSet.stereo(d_max)
            u1 = backward(
                forward(net, pair1[0]), forward(net, pair1[1]), shifts, SUM, (1, depth)
            ).values
            u2 = backward(
                forward(net, pair2[0]), forward(net, pair2[1]), shifts, SUM, (1, depth)
            ).values
            reach, _ = aggregation_reach(net, (1, depth))
            lo = d_max + reach + delta
            hi = w - delta - reach
            assert hi - lo >= 16
            assert np.array_equal(u2[lo + delta : hi + delta], u1[lo:hi])
        passed("translation equivariance exact on 5 fixtures (delta = Q)")


class TestMetricFixtures:
    def test_err3_fixture_and_monotonicity(self):
        gt = DisparityMap(np.full((10, 10), 2.0), np.full((10, 10), True))
        pred_vals = np.full((10, 10), 2.0)
        pred_vals[0, :] += 4.0
        report = err_metric(DisparityMap(pred_vals, np.full((10, 10), True)), gt)
        assert report.err[3] == pytest.approx(10.0)
        assert f"{report.err[3]:.2f}" == "10.00"

        rng = np.random.default_rng(55)
        rand_pred = DisparityMap(rng.random((12, 9)) * 8, np.full((12, 9), True))
        rand_gt = DisparityMap(rng.random((12, 9)) * 8, np.full((12, 9), True))
        rep = err_metric(rand_pred, rand_gt)
        errs = [rep.err[t] for t in (1, 2, 3, 4, 5)]
        assert errs == sorted(errs, reverse=True)
        passed("metric fixtures: Err_3 = 10.00 and threshold monotonicity")


class TestFormatStability:
    def test_npw1_and_npcv_golden_bytes(self):
        assert save_weights(golden_net()) == (GOLDEN / "tiny.npw1").read_bytes()
        net, ref, srch = golden_volume_inputs()
        vol = backward(
            forward(net, ref),
            forward(net, srch),
            ShiftSet.stereo(2),
            make_semiring("max_min"),
            (1, 2),
        )
        assert save_volume(vol) == (GOLDEN / "tiny.npcv").read_bytes()
        passed("format stability: golden NPW1 and NPCV byte-for-byte")
