import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evinterp.errors import InputError
from evinterp.events import (Event, EventStream, Frame, SimulatorConfig, build_voxel_grid,
                             event_integral, simulate_events, synthesize_pseudo_frame)

from conftest import random_stream

EPS = 1e-3


def _pair_with_log_change(delta, base=0.3, shape=(4, 5), t1=1000):
    a = np.full(shape, base)
    b = a.copy()
    b[1, 2] = (base + EPS) * np.exp(delta) - EPS
    return [Frame(a, 0), Frame(b, t1)]


class TestEventTypes:
    def test_event_rejects_bad_polarity(self):
        with pytest.raises(InputError):
            Event(0, 0, 0, 0)

    def test_event_rejects_negative_time(self):
        with pytest.raises(InputError):
            Event(-1, 0, 0, 1)

    def test_stream_rejects_out_of_bounds_with_index(self):
        with pytest.raises(InputError, match="event 1"):
            EventStream(4, 4, [0, 1], [0, 4], [0, 0], [1, 1])

    def test_stream_rejects_unsorted(self):
        with pytest.raises(InputError, match="index 2"):
            EventStream(4, 4, [0, 5, 3], [0, 0, 0], [0, 0, 0], [1, 1, 1])

    def test_stream_rejects_bad_polarity(self):
        with pytest.raises(InputError):
            EventStream(4, 4, [0], [0], [0], [2])

    def test_stream_is_read_only(self, rng):
        ev = random_stream(rng)
        with pytest.raises(ValueError):
            ev.t[0] = 5

    def test_from_events_roundtrip(self, rng):
        ev = random_stream(rng, n=20)
        assert EventStream.from_events(ev.width, ev.height, list(ev)) == ev

    def test_frame_range_checked(self):
        with pytest.raises(InputError):
            Frame(np.full((2, 2), 1.5))
        with pytest.raises(InputError):
            Frame(np.zeros((2, 2, 2)))

    def test_frame_luma_weights(self):
        f = Frame.from_hwc(np.ones((2, 2, 3)) * [1.0, 0.0, 0.0])
        assert np.allclose(f.luma(), 0.299)
        assert f.channels == 3 and f.shape == (2, 2)

    def test_simulator_config_validation(self):
        with pytest.raises(InputError):
            SimulatorConfig(contrast_threshold=0)
        with pytest.raises(InputError):
            SimulatorConfig(refractory_us=-1)


class TestWindowing:
    def test_window_is_half_open(self):
        ev = EventStream(2, 1, [10, 20, 30], [0, 1, 0], [0, 0, 0], [1, 1, 1])
        assert list(ev.window(10, 30).t) == [20, 30]
        assert list(ev.window(10, 30, closed_left=True).t) == [10, 20, 30]

    def test_time_reversal_is_an_involution(self, rng):
        ev = random_stream(rng).window(100, 9000)
        back = ev.time_reversed(100, 9000).time_reversed(100, 9000)
        assert back == ev

    def test_time_reversal_flips_polarity_and_keeps_window(self, rng):
        ev = random_stream(rng).window(100, 9000)
        rev = ev.time_reversed(100, 9000)
        assert len(rev) == len(ev)
        assert rev.t.min() > 100 and rev.t.max() <= 9000
        assert rev.p.sum() == -ev.p.sum()

    def test_reversed_integral_negates_remaining_change(self, rng):
        ev = random_stream(rng).window(0, 10_000)
        t = 4321
        fwd_rest = event_integral(ev, t, 10_000, 1.0)
        rev = ev.time_reversed(0, 10_000)
        assert np.array_equal(event_integral(rev, 0, 10_000 - t, 1.0), -fwd_rest)

    def test_shift_drops_outside_events(self):
        ev = EventStream(3, 3, [0, 1], [0, 2], [0, 2], [1, -1])
        s = ev.shifted(1, 0)
        assert len(s) == 1 and s.x[0] == 1


class TestSimulator:
    def test_two_crossings_at_analytic_times(self):
        c = 0.1
        ev = simulate_events(_pair_with_log_change(2.5 * c), SimulatorConfig(c))
        assert list(ev.t) == [400, 800]
        assert list(ev.p) == [1, 1]
        assert set(zip(ev.x, ev.y)) == {(2, 1)}

    def test_negative_change_emits_negative_events(self):
        ev = simulate_events(_pair_with_log_change(-0.35), SimulatorConfig(0.1))
        assert list(ev.p) == [-1, -1, -1]

    def test_identical_frames_give_no_events(self, rng):
        img = rng.random((8, 8))
        assert len(simulate_events([Frame(img, 0), Frame(img, 100)])) == 0

    def test_sub_threshold_change_gives_no_events(self):
        c = 0.1
        a = np.full((6, 6), 0.4)
        b = (a + EPS) * np.exp(0.9 * c) - EPS
        assert len(simulate_events([Frame(a, 0), Frame(b, 50)], SimulatorConfig(c))) == 0

    def test_reference_carries_across_segments(self):
        c = 0.1
        f = _pair_with_log_change(0.6 * c)
        g = _pair_with_log_change(1.2 * c, t1=2000)[1]
        ev = simulate_events([f[0], f[1], g], SimulatorConfig(c))
        assert list(ev.t) == [int(np.rint(1000 + 1000 * (0.4 / 0.6)))]

    def test_output_sorted(self, rng):
        frames = [Frame(rng.random((8, 8)) * 0.9 + 0.05, 100 * i) for i in range(4)]
        ev = simulate_events(frames)
        assert np.all(np.diff(ev.t) >= 0)
        assert ev.t.min() > 0 and ev.t.max() <= 300

    def test_refractory_drops_close_events(self):
        c = 0.1
        full = simulate_events(_pair_with_log_change(5.5 * c), SimulatorConfig(c))
        thin = simulate_events(_pair_with_log_change(5.5 * c), SimulatorConfig(c, refractory_us=300))
        assert len(full) == 5
        assert np.all(np.diff(thin.t) >= 300)
        assert set(thin.t) <= set(full.t)

    def test_color_frames_use_luma(self, rng):
        rgb = [Frame(rng.random((3, 6, 6)), 0), Frame(rng.random((3, 6, 6)), 100)]
        gray = [Frame(f.luma(), f.t) for f in rgb]
        assert simulate_events(rgb) == simulate_events(gray)

    def test_errors(self, rng):
        a = Frame(rng.random((4, 4)), 0)
        with pytest.raises(InputError):
            simulate_events([a])
        with pytest.raises(InputError):
            simulate_events([a, a.with_time(0)])
        with pytest.raises(InputError):
            simulate_events([a, Frame(rng.random((4, 5)), 10)])

    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.5))
    def test_integral_within_threshold_of_log_change(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b = rng.random((6, 6)), rng.random((6, 6))
        ev = simulate_events([Frame(a, 0), Frame(b, 1000)], SimulatorConfig(c))
        truth = np.log(b + EPS) - np.log(a + EPS)
        assert np.all(np.abs(event_integral(ev, 0, 1000, c) - truth) <= c + 1e-6)

    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.4))
    def test_doubling_threshold_never_adds_events(self, seed, c):
        rng = np.random.default_rng(seed)
        frames = [Frame(rng.random((5, 5)), 100 * i) for i in range(3)]

        def counts(cc):
            ev = simulate_events(frames, SimulatorConfig(cc))
            return np.bincount(ev.y.astype(int) * 5 + ev.x, minlength=25)

        assert np.all(counts(2 * c) <= counts(c))


class TestVoxelGrid:
    def _single(self, t, p):
        return EventStream(3, 2, [t], [1], [0], [p])

    def test_event_at_bin_centre(self):
        grid = build_voxel_grid(self._single(500, 1), 0, 1000, bins=5)
        expect = np.zeros((5, 2, 3))
        expect[2, 0, 1] = 1.0
        assert np.array_equal(grid.data, expect)

    def test_bilinear_split(self):
        grid = build_voxel_grid(self._single(3125, -1), 0, 10_000, bins=5)
        assert grid.data[1, 0, 1] == pytest.approx(-0.75)
        assert grid.data[2, 0, 1] == pytest.approx(-0.25)
        assert np.count_nonzero(grid.data) == 2

    def test_empty_stream_gives_zero_grid(self):
        grid = build_voxel_grid(EventStream.empty(3, 2), 0, 10, bins=4)
        assert grid.data.shape == (4, 2, 3) and not grid.data.any()

    def test_window_endpoints_included(self):
        ev = EventStream(1, 1, [0, 10, 20], [0, 0, 0], [0, 0, 0], [1, 1, 1])
        grid = build_voxel_grid(ev, 0, 10, bins=2)
        assert grid.data[:, 0, 0].tolist() == [1.0, 1.0]

    def test_errors(self):
        ev = self._single(1, 1)
        with pytest.raises(InputError):
            build_voxel_grid(ev, 0, 10, bins=0)
        with pytest.raises(InputError):
            build_voxel_grid(ev, 10, 10)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 9))
    def test_mass_conservation(self, seed, bins):
        rng = np.random.default_rng(seed)
        ev = random_stream(rng, n=300)
        grid = build_voxel_grid(ev, 1000, 8000, bins)
        inside = ev.window(1000, 8000, closed_left=True)
        assert np.all(np.isfinite(grid.data))
        assert grid.data.sum() == pytest.approx(inside.p.sum(), rel=1e-4, abs=1e-9)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(2, 5))
    def test_concatenated_windows_match_union(self, seed, bins, parts):
        rng = np.random.default_rng(seed)
        ev = random_stream(rng, n=200)
        t_a, t_b = 500, 9500
        cuts = np.sort(rng.choice(np.arange(t_a + 1, t_b), parts - 1, replace=False))
        edges = [t_a, *cuts.tolist(), t_b]
        pieces = [ev.window(edges[0], edges[1], closed_left=True)]
        pieces += [ev.window(a, b) for a, b in zip(edges[1:], edges[2:])]
        joined = EventStream.concatenate(pieces)
        whole = build_voxel_grid(ev, t_a, t_b, bins)
        assert np.array_equal(build_voxel_grid(joined, t_a, t_b, bins).data, whole.data)


class TestIntegralAndPseudoFrames:
    def test_single_event(self):
        ev = EventStream(3, 3, [5], [1], [2], [1])
        m = event_integral(ev, 0, 10, 0.2)
        expect = np.zeros((3, 3))
        expect[2, 1] = 0.2
        assert np.array_equal(m, expect)

    def test_polarity_sum(self):
        ev = EventStream(2, 2, [1, 2, 3], [0, 0, 0], [0, 0, 0], [1, 1, -1])
        assert event_integral(ev, 0, 3, 0.3)[0, 0] == pytest.approx(0.3)

    def test_empty_window_zero(self, rng):
        ev = random_stream(rng)
        assert not event_integral(ev, 50, 50, 0.1).any()

    def test_reversed_window_rejected(self, rng):
        with pytest.raises(InputError):
            event_integral(random_stream(rng), 10, 5, 0.1)

    def test_no_events_returns_keyframe_exactly(self, rng):
        I0 = Frame(rng.random((12, 16)), 100)
        out = synthesize_pseudo_frame(I0, EventStream.empty(16, 12), 500, 0.1)
        assert np.array_equal(out.data, I0.data) and out.t == 500

    def test_pseudo_frame_matches_true_frame(self, rng):
        c = 0.15
        a, b = rng.random((10, 10)), rng.random((10, 10))
        ev = simulate_events([Frame(a, 0), Frame(b, 1000)], SimulatorConfig(c))
        out = synthesize_pseudo_frame(Frame(a, 0), ev, 1000, c, EPS)
        assert np.max(np.abs(out.data[0] - b)) <= (np.exp(c) - 1) * b.max() + 2 * EPS

    def test_color_pseudo_frame_scales_channels(self, rng):
        rgb = Frame(rng.random((3, 4, 4)) * 0.5, 0)
        ev = EventStream(4, 4, [10], [0], [0], [1])
        out = synthesize_pseudo_frame(rgb, ev, 20, 0.1, EPS)
        ratio = (out.data[:, 0, 0] + EPS) / (rgb.data[:, 0, 0] + EPS)
        assert np.allclose(ratio, np.exp(0.1))
        assert np.array_equal(out.data[:, 1:, :], rgb.data[:, 1:, :])

    def test_time_before_keyframe_rejected(self, rng):
        with pytest.raises(InputError):
            synthesize_pseudo_frame(Frame(rng.random((4, 4)), 100), EventStream.empty(4, 4), 50, 0.1)
