import os

import numpy as np
import pytest

from neuropath import (
    CONV,
    Grid,
    LayerSpec,
    NetworkSpec,
    ShiftSet,
    backward,
    brute_force,
    count_arcs,
    count_paths,
    forward,
    load_volume,
    m_conv,
    make_semiring,
    save_volume,
)
from neuropath.errors import (
    BadMagicError,
    MismatchedStackError,
    PathCountOverflowError,
    TruncatedStreamError,
)
from neuropath.verify import random_case, random_conv, random_pool, run_case
from helpers import random_pair, toy_net

SUM = make_semiring("sum_product")
MAXMIN = make_semiring("max_min")


class TestRecursionBase:
    def test_single_1x1_conv_is_channel_sum_of_matches(self, rng):
        net = NetworkSpec((random_conv(rng, 1, 3, kernel=1),))
        ref, srch = random_pair(rng, net, extents=(5, 4))
        shifts = ShiftSet(((0, 0, 0), (2, 0, 0)))
        vol = backward(ref, srch, shifts, SUM, (1, 1))
        a, b = ref.layers[0].post, srch.layers[0].post
        for x in range(5):
            for y in range(4):
                for i, (dx, _, _) in enumerate(shifts.shifts):
                    if x - dx < 0:
                        expected = 0.0
                    else:
                        expected = sum(
                            m_conv(float(a[x, y, c]), float(b[x - dx, y, c]))
                            for c in range(3)
                        )
                    assert vol.values[x, y, i] == pytest.approx(expected, rel=1e-12)

    def test_single_3x3_conv_adds_window_fanout(self, rng):
        net = NetworkSpec((random_conv(rng, 1, 2, kernel=3),))
        ref, srch = random_pair(rng, net, extents=(5, 4))
        shifts = ShiftSet(((1, 0, 0),))
        vol = backward(ref, srch, shifts, SUM, (1, 1))
        a, b = ref.layers[0].post, srch.layers[0].post
        w, h, cc = a.shape
        for x in range(w):
            for y in range(h):
                expected = 0.0
                for nx in range(max(0, x - 1), min(w, x + 2)):
                    for ny in range(max(0, y - 1), min(h, y + 2)):
                        if nx - 1 >= 0:
                            expected += sum(
                                m_conv(float(a[nx, ny, c]), float(b[nx - 1, ny, c]))
                                for c in range(cc)
                            )
                assert vol.values[x, y, 0] == pytest.approx(expected, rel=1e-12)


class TestOracleEquivalence:
    def test_three_layer_toy_matches_enumeration(self, rng):
        net = NetworkSpec(
            (random_conv(rng, 1, 2), random_pool(2), random_conv(rng, 2, 2))
        )
        ref, srch = random_pair(rng, net, extents=(6, 6))
        shifts = ShiftSet(((0, 0, 0), (1, 0, 0), (2, 0, 0)))
        fast = backward(ref, srch, shifts, SUM, (1, 3))
        slow = brute_force(ref, srch, shifts, SUM, (1, 3))
        np.testing.assert_allclose(
            fast.values, slow.volume.values, rtol=1e-9, atol=1e-12
        )

    def test_randomized_cases_all_semirings_both_modes(self):
        gen = np.random.default_rng(77)
        for _ in range(8):
            case = random_case(gen)
            for mode in ("full", "central"):
                result = run_case(case, mode)
                assert result.within_tolerance(), (case.describe(), mode, result)

    @pytest.mark.parametrize(
        "kinds,extents,layer_range,shifts",
        [
            ("cp", (6, 4), (1, 2), [(0, 0, 0), (3, 0, 0), (-2, 1, 0)]),
            ("pp", (8, 8), (1, 2), [(0, 0, 0), (5, -3, 0)]),
            ("cpc", (8, 4), (2, 3), [(0, 0, 0), (1, 0, 0), (2, 1, 0)]),
            ("cp", (4, 4), (2, 2), [(0, 0, 0), (1, 1, 0)]),
            ("cc", (5, 4), (1, 2), [(9, 0, 0), (-9, 0, 0), (0, 7, 0)]),
            ("cc", (1, 5), (1, 2), [(0, 0, 0), (0, 2, 0)]),
            ("c", (1, 1), (1, 1), [(0, 0, 0)]),
            ("cpcp", (8, 8), (1, 4), [(0, 0, 0), (3, 0, 0), (6, 1, 0), (-1, -1, 0)]),
        ],
    )
    def test_edge_geometries(self, rng, kinds, extents, layer_range, shifts):
        # pool-terminated nets, ranges starting at a pool, fully
        # off-grid shifts, and degenerate grids must all agree with
        # enumeration under every semiring and arc mode
        from neuropath.verify import relative_deviation

        net = toy_net(rng, kinds, cmax=2)
        ref, srch = random_pair(rng, net, extents=extents)
        ss = ShiftSet(tuple(shifts))
        s, _ = layer_range
        base = ref.volume(s - 1)
        for mode in ("full", "central"):
            expected = count_paths(net, base.shape[:2], layer_range, mode)
            for name in ("sum_product", "max_product", "max_min"):
                sr = make_semiring(name)
                fast = backward(ref, srch, ss, sr, layer_range, arc_mode=mode)
                slow = brute_force(ref, srch, ss, sr, layer_range, arc_mode=mode)
                dev = relative_deviation(fast.values, slow.volume.values)
                assert dev <= (0.0 if name == "max_min" else 1e-9)
                np.testing.assert_array_equal(slow.path_counts, expected)

    def test_perfect_match_dominates_on_identical_images(self, rng):
        net = toy_net(rng, "cc", cmax=2)
        img = Grid(rng.random((7, 5, 1)).astype(np.float32))
        stack = forward(net, img)
        d_max = 2
        vol = backward(stack, stack, ShiftSet.stereo(d_max), MAXMIN, (1, 2))
        # every path from x stays in bounds for all shifts once x >= d_max + reach
        for x in range(d_max + 3, 7):
            for y in range(5):
                assert vol.values[x, y, 0] == vol.values[x, y].max()


class TestInvariants:
    def test_shift_marginalization_bitexact(self, rng):
        net = toy_net(rng, "cpc")
        ref, srch = random_pair(rng, net)
        full = backward(ref, srch, ShiftSet.stereo(3), SUM, (1, 3))
        for d in range(4):
            single = backward(ref, srch, ShiftSet(((d, 0, 0),)), SUM, (1, 3))
            np.testing.assert_array_equal(single.values[:, :, 0], full.values[:, :, d])

    def test_monotone_evidence_under_channel_add(self, rng):
        w = rng.normal(size=(2, 1, 3, 3)).astype(np.float32)
        b = np.zeros(2, dtype=np.float32)
        small = NetworkSpec((LayerSpec(CONV, 1, 2, (3, 3), 1, w, b),))
        wide_w = np.concatenate([w, rng.normal(size=(1, 1, 3, 3)).astype(np.float32)])
        wide = NetworkSpec((LayerSpec(CONV, 1, 3, (3, 3), 1, wide_w, np.zeros(3, np.float32)),))
        img_a = Grid(rng.random((6, 6, 1)).astype(np.float32))
        img_b = Grid(rng.random((6, 6, 1)).astype(np.float32))
        shifts = ShiftSet.stereo(2)
        u_small = backward(forward(small, img_a), forward(small, img_b), shifts, SUM).values
        u_wide = backward(forward(wide, img_a), forward(wide, img_b), shifts, SUM).values
        assert np.all(u_wide >= u_small - 1e-12)

    def test_virtual_layer_is_relabeling_for_one_channel(self, rng):
        net = toy_net(rng, "cc", cmax=2)
        ref, srch = random_pair(rng, net, extents=(6, 5))
        vol = backward(ref, srch, ShiftSet.stereo(2), SUM, (1, 2), keep_tables=True)
        base_table = vol.tables[-1]
        assert base_table.shape[2] == 1
        np.testing.assert_array_equal(base_table[:, :, 0, :], vol.values)

    def test_virtual_layer_folds_per_channel_results(self, rng):
        # two-channel base: the origin's score is the oplus of the
        # per-channel scores of the volume it fans out to
        net = NetworkSpec((random_conv(rng, 2, 2), random_pool(2)))
        a = Grid(rng.random((6, 6, 2)).astype(np.float32))
        b = Grid(rng.random((6, 6, 2)).astype(np.float32))
        ref, srch = forward(net, a), forward(net, b)
        vol = backward(ref, srch, ShiftSet.stereo(1), SUM, (1, 2), keep_tables=True)
        base_table = vol.tables[-1]
        assert base_table.shape[2] == 2
        np.testing.assert_array_equal(
            base_table[:, :, 0, :] + base_table[:, :, 1, :], vol.values
        )

    def test_threaded_run_is_bit_identical(self, rng):
        net = toy_net(rng, "cpc")
        ref, srch = random_pair(rng, net, extents=(8, 8))
        shifts = ShiftSet.stereo(5)
        serial = backward(ref, srch, shifts, SUM, (1, 3))
        os.environ["NEUROPATH_THREADS"] = "3"
        try:
            threaded = backward(ref, srch, shifts, SUM, (1, 3))
        finally:
            del os.environ["NEUROPATH_THREADS"]
        np.testing.assert_array_equal(serial.values, threaded.values)

    def test_mismatched_stacks_rejected(self, rng):
        net_a = toy_net(rng, "cc", cmax=2)
        net_b = toy_net(rng, "cp")
        ref, _ = random_pair(rng, net_a)
        _, srch = random_pair(rng, net_b)
        with pytest.raises(MismatchedStackError):
            backward(ref, srch, ShiftSet.stereo(1), SUM, (1, 2))


class TestStackValidation:
    def test_negative_activations_rejected(self, rng):
        # hand-built stacks carrying pre-ReLU-style negatives: the sweep
        # must refuse rather than emit negative scores
        from neuropath import ActivationStack
        from neuropath.errors import DomainError
        from neuropath.network import LayerActivation

        net = NetworkSpec((random_conv(rng, 1, 1),))
        img = rng.random((4, 4, 1)).astype(np.float32)

        def stack_with(post_value):
            post = np.full((4, 4, 1), post_value, dtype=np.float32)
            return ActivationStack(
                net=net, input=img, layers=(LayerActivation(post=post),), range=(1, 1)
            )

        with pytest.raises(DomainError):
            backward(stack_with(-1.0), stack_with(1.0), ShiftSet.stereo(0), SUM, (1, 1))


class TestVirtualLayer:
    def test_descriptor_shape_and_fanout(self, rng):
        from neuropath import attach_virtual_layer

        net = NetworkSpec((random_conv(rng, 1, 3), random_pool(3), random_conv(rng, 3, 2)))
        stack, _ = random_pair(rng, net, extents=(8, 6))
        v1 = attach_virtual_layer(stack, 1)
        assert (v1.width, v1.height, v1.fanout) == (8, 6, 1)
        v3 = attach_virtual_layer(stack, 3)
        assert (v3.width, v3.height, v3.fanout) == (4, 3, 3)
        # the aggregated volume is indexed by that grid
        vol = backward(stack, stack, ShiftSet.stereo(1), SUM, (3, 3))
        assert (vol.width, vol.height) == (v3.width, v3.height)


class TestCountPaths:
    def test_two_conv_chain_interior_is_81(self, rng):
        net = NetworkSpec((random_conv(rng, 1, 1), random_conv(rng, 1, 1)))
        counts = count_paths(net, (8, 8), (1, 2))
        assert counts[4, 4] == 81

    def test_single_pool_is_channel_fanout(self, rng):
        net = NetworkSpec((random_pool(3),))
        counts = count_paths(net, (4, 4), (1, 1))
        assert np.all(counts == 3)

    def test_single_1x1_conv_is_out_channel_fanout(self, rng):
        net = NetworkSpec((random_conv(rng, 1, 4, kernel=1),))
        counts = count_paths(net, (4, 4), (1, 1))
        assert np.all(counts == 4)

    def test_uniform_two_layer_closed_form(self, rng):
        # two 3x3 conv layers at 2 channels everywhere: an interior
        # origin fans out 2 ways into the base, then (9*2)^2 onward
        net = NetworkSpec((random_conv(rng, 2, 2), random_conv(rng, 2, 2)))
        counts = count_paths(net, (9, 9), (1, 2))
        assert counts[4, 4] == 2 * (9 * 2) ** 2

    def test_matches_enumeration(self, rng):
        net = toy_net(rng, "cpc")
        ref, srch = random_pair(rng, net, extents=(4, 4))
        res = brute_force(ref, srch, ShiftSet.stereo(1), SUM, (1, 3))
        counts = count_paths(net, (4, 4), (1, 3))
        np.testing.assert_array_equal(res.path_counts, counts)

    def test_central_mode_counts_drop(self, rng):
        net = NetworkSpec((random_conv(rng, 1, 2), random_conv(rng, 2, 2)))
        full = count_paths(net, (8, 8), (1, 2))
        central = count_paths(net, (8, 8), (1, 2), arc_mode="central")
        assert np.all(central <= full)
        assert central[4, 4] == 2 * 2  # channel fanout only

    def test_overflow_guard(self, rng):
        layers = [random_conv(rng, 1, 3)] + [random_conv(rng, 3, 3) for _ in range(15)]
        net = NetworkSpec(tuple(layers))
        with pytest.raises(PathCountOverflowError):
            count_paths(net, (8, 8), (1, 16))

    def test_arc_count_shrinks_in_central_mode(self, rng):
        net = toy_net(rng, "cc", cmax=3)
        assert count_arcs(net, (8, 8), (1, 2), "central") < count_arcs(
            net, (8, 8), (1, 2), "full"
        )


class TestNpcv:
    def test_round_trip(self, rng):
        net = toy_net(rng, "cp")
        ref, srch = random_pair(rng, net, extents=(6, 6))
        vol = backward(ref, srch, ShiftSet.stereo(2), MAXMIN, (1, 2))
        again = load_volume(save_volume(vol))
        assert (again.width, again.height) == (vol.width, vol.height)
        assert again.semiring_id == "max_min"
        assert again.layer_range == (1, 2)
        np.testing.assert_allclose(
            again.values, vol.values.astype(np.float32), atol=0
        )

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            load_volume(b"NOPE" + bytes(64))

    def test_truncated_payload(self, rng):
        net = toy_net(rng, "cp")
        ref, srch = random_pair(rng, net, extents=(6, 6))
        blob = save_volume(backward(ref, srch, ShiftSet.stereo(1), SUM, (1, 2)))
        with pytest.raises(TruncatedStreamError):
            load_volume(blob[:-4])
