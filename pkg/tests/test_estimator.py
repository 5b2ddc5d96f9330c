import time

import numpy as np
import pytest
from scipy import ndimage

from evinterp.errors import InputError
from evinterp.events import EventStream, Frame
from evinterp.estimator import (EstimatorConfig, dense_flow, estimate_priority, estimate_spline_motion,
                                nonparametric_motion, with_mode)
from evinterp.spline import sample_spline
from evinterp.synthetic import (occlusion_scene, parabola_scene, simulate_scene, smooth_texture,
                                translating_scene)
from evinterp.warping import softmax_splat


def textured(seed=0, size=64):
    return smooth_texture(size, size, np.random.default_rng(seed), sigma=2.0, lo=0.1, hi=0.9)


def shifted_pair(dx, seed=0, size=64):
    img = textured(seed, size)
    return Frame(img, 0), Frame(np.roll(img, dx, axis=1), 100)


def interior_mean(flow, margin):
    return flow[:, margin:-margin, margin:-margin].reshape(2, -1).mean(axis=1)


class TestDenseFlow:
    def test_identical_frames_zero(self):
        I = Frame(textured(), 0)
        assert np.max(np.hypot(*dense_flow(I, I))) <= 0.05

    def test_small_translation(self):
        I0, I1 = shifted_pair(2)
        fx, fy = interior_mean(dense_flow(I0, I1, EstimatorConfig(levels=3)), 8)
        assert abs(fx - 2.0) <= 0.2 and abs(fy) <= 0.2

    def test_large_translation_needs_pyramid(self):
        I0, I1 = shifted_pair(12)
        flat = interior_mean(dense_flow(I0, I1, EstimatorConfig(levels=1)), 16)
        deep = interior_mean(dense_flow(I0, I1, EstimatorConfig(levels=4)), 16)
        assert abs(flat[0] - 12.0) > 0.5
        assert abs(deep[0] - 12.0) <= 0.5 and abs(deep[1]) <= 0.5

    def test_deterministic(self):
        I0, I1 = shifted_pair(3, seed=4)
        assert np.array_equal(dense_flow(I0, I1), dense_flow(I0, I1))

    def test_geometry_mismatch(self):
        with pytest.raises(InputError):
            dense_flow(Frame(np.zeros((8, 8))), Frame(np.zeros((8, 9))))


class TestConfig:
    def test_defaults(self):
        cfg = EstimatorConfig()
        assert (cfg.levels, cfg.iterations, cfg.alpha, cfg.mode) == (4, 100, 25.0, "both")
        assert cfg.sample_count(4) == 8

    def test_invalid(self):
        with pytest.raises(InputError):
            EstimatorConfig(levels=0)
        with pytest.raises(InputError):
            EstimatorConfig(mode="optical")

    def test_from_file_with_overrides(self, tmp_path):
        p = tmp_path / "est.cfg"
        p.write_text("# estimator\nlevels = 3\nalpha = 10.5\nmode = images\ndebias = false\n")
        cfg = EstimatorConfig.from_file(p, levels=2, mode=None)
        assert (cfg.levels, cfg.alpha, cfg.mode, cfg.debias) == (2, 10.5, "images", False)

    def test_from_file_errors(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("levels 3\n")
        with pytest.raises(InputError, match=":1:"):
            EstimatorConfig.from_file(p)
        p.write_text("gamma = 1\n")
        with pytest.raises(InputError, match="unknown key"):
            EstimatorConfig.from_file(p)


@pytest.fixture(scope="module")
def translating():
    # A high-contrast sprite keeps most object pixels above the event threshold.
    scene = translating_scene(64, velocity=(5.0, -2.0), seed=1, texture_range=(0.05, 0.95))
    (I0, I1), ev = simulate_scene(scene, 2)
    mask = ndimage.binary_erosion(scene.object_mask(0.0), iterations=2)
    return scene, I0, I1, ev, mask


class TestSplineMotion:
    def test_static_scene_zero_flow(self):
        I = Frame(textured(2), 0)
        S = estimate_spline_motion(I, I.with_time(10_000), EventStream.empty(64, 64))
        assert not S.data[:, :2].any()

    def test_translating_square(self, translating):
        scene, I0, I1, ev, mask = translating
        S = estimate_spline_motion(I0, I1, ev, 4)
        for t in (0.5, 1.0):
            err = np.hypot(*(sample_spline(S, t).flow - scene.true_flow(0.0, t)))[mask]
            assert err.mean() <= 0.5

    def test_images_mode_is_linear(self, translating):
        _, I0, I1, ev, _ = translating
        cfg = with_mode(EstimatorConfig(), "images")
        S = estimate_spline_motion(I0, I1, ev, 5, cfg)
        F = dense_flow(I0, I1, cfg)
        for k, tau in enumerate(S.control_times):
            assert np.allclose(S.data[k, :2], tau * F, atol=1e-12)
        assert np.max(np.abs(sample_spline(S, 1.0).flow - F)) <= 1e-3

    def test_deterministic(self, translating):
        _, I0, I1, ev, _ = translating
        a = estimate_spline_motion(I0, I1, ev, 4)
        b = estimate_spline_motion(I0, I1, ev, 4)
        assert np.array_equal(a.data, b.data)

    def test_parabola_both_beats_images(self):
        scene = parabola_scene(seed=1)
        (I0, I1), ev = simulate_scene(scene, 2)
        mask = ndimage.binary_erosion(scene.object_mask(0.0), iterations=2)
        gt = scene.true_flow(0.0, 0.5)
        err = {}
        for mode in ("both", "images"):
            S = estimate_spline_motion(I0, I1, ev, 4, with_mode(EstimatorConfig(), mode))
            err[mode] = np.hypot(*(sample_spline(S, 0.5).flow - gt))[mask].mean()
        assert err["both"] < err["images"]

    def test_events_mode_needs_events(self):
        I = Frame(textured(), 0)
        with pytest.raises(InputError):
            estimate_spline_motion(I, I.with_time(100), EventStream.empty(64, 64), 4,
                                   with_mode(EstimatorConfig(), "events"))

    def test_too_few_samples(self, translating):
        _, I0, I1, ev, _ = translating
        with pytest.raises(InputError):
            estimate_spline_motion(I0, I1, ev, 6, EstimatorConfig(samples=4))


class TestPriority:
    def test_consistent_warp_is_zero(self):
        I = Frame(textured(3), 0)
        prio = estimate_priority(I, [np.zeros((2, 64, 64))], [I])
        assert prio.shape == (1, 64, 64) and not prio.any()

    def test_residual_formula(self):
        a = Frame(np.full((4, 4), 0.2))
        b = Frame(np.full((4, 4), 0.7))
        prio = estimate_priority(a, [np.zeros((2, 4, 4))], [b])
        assert np.allclose(prio, -5.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_occluder_wins_collisions(self, seed):
        scene = occlusion_scene(seed=seed)
        I0, I1 = scene.frame(0.0), scene.frame(1.0)
        F = scene.true_flow(0.0, 1.0)
        P = estimate_priority(I0, [F], [I1])[0]
        front = scene.sprites[1].coverage(0.0, 64, 64) >= 0.5
        back = (scene.sprites[0].coverage(0.0, 64, 64) >= 0.5) & ~front
        fs = softmax_splat(front[None].astype(float), F, P).warped[0]
        bs = softmax_splat(back[None].astype(float), F, P).warped[0]
        sites = (fs > 1e-9) & (bs > 1e-9)
        assert sites.sum() > 50
        assert np.mean(fs[sites] > bs[sites]) >= 0.9


class TestNonparametric:
    def test_time_zero(self, translating):
        _, I0, I1, ev, _ = translating
        assert np.max(np.abs(nonparametric_motion(I0, I1, ev, 0.0))) <= 0.05

    def test_agrees_with_spline_on_linear_motion(self, translating):
        _, I0, I1, ev, mask = translating
        S = estimate_spline_motion(I0, I1, ev, 4)
        for t in (0.25, 0.5, 0.75):
            diff = np.hypot(*(nonparametric_motion(I0, I1, ev, t) - sample_spline(S, t).flow))
            assert diff[mask].mean() <= 0.5

    def test_time_outside_range(self, translating):
        _, I0, I1, ev, _ = translating
        with pytest.raises(InputError):
            nonparametric_motion(I0, I1, ev, 1.5)

    def test_cost_scales_with_insertions(self, translating):
        _, I0, I1, ev, _ = translating

        def run(times):
            start = time.process_time()
            for t in times:
                nonparametric_motion(I0, I1, ev, t)
            return time.process_time() - start

        run([0.5])
        single = min(run([0.5]) for _ in range(3))
        ten = min(run([i / 11 for i in range(1, 11)]) for _ in range(2))
        assert 7.0 <= ten / single <= 13.0
