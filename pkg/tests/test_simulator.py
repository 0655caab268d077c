import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spadsr.core import DepthMap, IntensityMap, NoiseSpec
from spadsr.features import center_of_mass_bins
from spadsr.metrics import measure_noise
from spadsr.scenes import random_scene
from spadsr.simulator import (PRESETS, ScenePair, augment, block_sum, dihedral,
                              expected_histogram, expected_signal, irf_kernel, make_patches,
                              preset, simulate)


def flat_scene(h, w, depth=0.5, inten=1.0):
    return ScenePair(DepthMap(np.full((h, w), depth)), IntensityMap(np.full((h, w), inten)))


class TestExpectedSignal:
    def test_unit_sum_per_pixel(self, rng):
        d = rng.uniform(0, 1, (5, 7))
        r = rng.uniform(0, 1, (5, 7))
        sig = expected_signal(d, r, 16, 0.5714)
        np.testing.assert_allclose(sig.sum(-1), r, rtol=1e-12)

    def test_symmetric_about_centre_bin(self):
        sig = expected_signal(np.array([[0.5]]), np.array([[1.0]]), 16, 0.5714)[0, 0]
        np.testing.assert_allclose(sig[7 - 3:7], sig[8:8 + 3][::-1], rtol=1e-12)

    def test_noise_free_depth_estimate(self):
        lam, *_ = expected_histogram(flat_scene(4, 4), 16, NoiseSpec(1.0, math.inf), 4)
        d, valid = center_of_mass_bins(lam, 0.0, np.argmax(lam, -1) + 1)
        assert valid.all()
        assert abs(d[0, 0] - 8.0) < 0.05

    def test_irf_kernel(self):
        k = irf_kernel(0.5714)
        assert k.size == 5 and k.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(k, k[::-1])


class TestSimulate:
    def test_pure_background(self):
        spec = NoiseSpec(ppp=6.0, sbr=0.5, seed=3)
        m = simulate(flat_scene(1024, 1024, inten=0.0), 16, spec, 4)
        counts = m.histogram.counts
        assert counts.size >= 10**6
        assert m.true_background == pytest.approx(4.0)
        assert abs(counts.mean() - 4.0) < 0.01 * 4.0

    def test_high_preset_calibration(self):
        scene = random_scene((256, 128), seed=4)
        m = simulate(scene, 16, preset("high", seed=1), 4)
        sbr, ppp = measure_noise(m.histogram, m.true_background, m.true_peaks)
        assert abs(ppp - 1200) < 0.05 * 1200
        assert abs(sbr - 2.0) < 0.1 * 2.0

    def test_count_conservation(self):
        m = simulate(random_scene((32, 32), seed=1), 16, preset("medium", seed=2), 4, keep_hr=True)
        assert int(m.histogram.counts.sum()) == int(m.hr_histogram.sum())

    def test_deterministic(self):
        scene = random_scene((32, 32), seed=2)
        a = simulate(scene, 16, preset("low", seed=5), 4)
        b = simulate(scene, 16, preset("low", seed=5), 4)
        c = simulate(scene, 16, preset("low", seed=6), 4)
        np.testing.assert_array_equal(a.histogram.counts, b.histogram.counts)
        assert not np.array_equal(a.histogram.counts, c.histogram.counts)

    def test_per_bin_mean_converges(self):
        # 80x80 identical LR pixels x 16 bins gives ~1e5 samples
        scene = flat_scene(320, 320, depth=0.4, inten=0.8)
        spec = NoiseSpec(ppp=20.0, sbr=0.5, seed=8)
        lam, *_ = expected_histogram(scene, 16, spec, 4)
        counts = simulate(scene, 16, spec, 4).histogram.counts.reshape(-1, 16).astype(float)
        n = counts.shape[0]
        mu = lam[0, 0]
        assert np.all(np.abs(counts.mean(0) - mu) < 5 * np.sqrt(mu / n))

    def test_doubling_ppp_doubles_scales(self):
        scene = random_scene((32, 32), seed=3)
        a = simulate(scene, 16, NoiseSpec(4.0, 0.02), 4)
        b = simulate(scene, 16, NoiseSpec(8.0, 0.02), 4)
        assert b.signal_scale == pytest.approx(2 * a.signal_scale, rel=1e-12)
        assert b.true_background == pytest.approx(2 * a.true_background, rel=1e-12)

    def test_background_formula(self):
        m = simulate(random_scene((16, 16), seed=0), 16, NoiseSpec(4.0, 0.02), 4)
        assert m.true_background == pytest.approx(4.0 / (3 * 0.02))

    def test_bicubic_mode_shapes(self):
        m = simulate(random_scene((64, 48), seed=0), 60, preset("medium"), 8, mode="bicubic")
        assert m.histogram.shape == (8, 6, 60)
        assert m.intensity.shape == (64, 48)

    @pytest.mark.parametrize("kwargs, exc", [
        (dict(bins=2), ValueError),
        (dict(s=3), ValueError),
    ])
    def test_errors(self, kwargs, exc):
        args = dict(scene=flat_scene(8, 8), bins=16, spec=preset("high"), s=4)
        args.update(kwargs)
        with pytest.raises(exc):
            simulate(**args)

    def test_presets(self):
        assert PRESETS == {"high": (1200.0, 2.0), "medium": (4.0, 0.02), "low": (4.0, 0.006)}


class TestPatchesAndAugment:
    @pytest.mark.parametrize("shape, count", [((96, 96), 1), ((192, 144), 6), ((436, 1024), 160)])
    def test_patch_counts(self, shape, count):
        assert len(make_patches(flat_scene(*shape))) == count

    def test_patch_too_large(self):
        with pytest.raises(ValueError):
            make_patches(flat_scene(64, 64), size=96)

    def test_constant_image_copies(self):
        out = augment(flat_scene(4, 4, 0.3, 0.6))
        assert len(out) == 8
        for s in out:
            assert (s.depth_gt.values == 0.3).all() and (s.intensity_gt.values == 0.6).all()

    def test_shapes_under_rotation(self):
        out = augment(flat_scene(2, 3))
        shapes = sorted(s.shape for s in out)
        assert shapes == [(2, 3)] * 4 + [(3, 2)] * 4

    def test_depth_and_intensity_move_together(self, rng):
        d = rng.random((3, 5))
        scene = ScenePair(DepthMap(d), IntensityMap(d.copy()))
        for s in augment(scene):
            np.testing.assert_array_equal(s.depth_gt.values, s.intensity_gt.values)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                      elements=st.floats(0, 1)))
    def test_four_quarter_turns_identity(self, img):
        out = img
        for _ in range(4):
            out = dihedral(out, 1)
        np.testing.assert_array_equal(out, img)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.uint32, (8, 12, 3), elements=st.integers(0, 1000)))
    def test_block_sum_conserves(self, cube):
        assert block_sum(cube, 4).sum() == cube.sum()
