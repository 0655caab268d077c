import numpy as np
import pytest
from scipy import stats

from spadsr import kernels
from spadsr.kernels import compiled_backend, python_backend

needs_compiled = pytest.mark.skipif(compiled_backend is None, reason="extension not built")

BACKENDS = [python_backend] + ([compiled_backend] if compiled_backend is not None else [])


def _cube(rng, n=200, t=16, lam=3.0):
    return rng.poisson(lam, size=(n, t)).astype(np.float64)


@needs_compiled
class TestBackendParity:
    def test_uniform_stream(self):
        keys = np.arange(1000, dtype=np.uint64)
        a = python_backend.uniform_stream(7, keys, 3)
        b = compiled_backend.uniform_stream(7, keys, 3)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 4.0, 9.99, 10.0, 57.0, 1500.0])
    def test_poisson(self, lam):
        arr = np.full(500, lam)
        np.testing.assert_array_equal(python_backend.poisson_sample(arr, 11),
                                      compiled_backend.poisson_sample(arr, 11))

    def test_peaks_and_moments(self, rng):
        c = _cube(rng)
        b = np.median(c, axis=1)
        np.testing.assert_array_equal(python_backend.argmax_peaks(c), compiled_backend.argmax_peaks(c))
        k = np.array([0.1, 0.8, 0.1])
        np.testing.assert_array_equal(python_backend.matched_filter_peaks(c, k),
                                      compiled_backend.matched_filter_peaks(c, k))
        p = python_backend.argmax_peaks(c)
        for x, y in zip(python_backend.center_of_mass(c, b, p), compiled_backend.center_of_mass(c, b, p)):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(python_backend.second_peaks(c, b, p, 1.0),
                                      compiled_backend.second_peaks(c, b, p, 1.0))

    def test_box_sum(self, rng):
        img = rng.random((23, 17))
        np.testing.assert_array_equal(python_backend.box_sum(img, 3), compiled_backend.box_sum(img, 3))


@pytest.mark.parametrize("be", BACKENDS, ids=lambda m: m.BACKEND)
class TestPoisson:
    def test_uniform_in_open_interval(self, be):
        u = be.uniform_stream(0, np.arange(10000, dtype=np.uint64), 0)
        assert u.min() > 0 and u.max() < 1
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_deterministic_and_key_dependent(self, be):
        lam = np.full(100, 5.0)
        np.testing.assert_array_equal(be.poisson_sample(lam, 3), be.poisson_sample(lam, 3))
        assert not np.array_equal(be.poisson_sample(lam, 3), be.poisson_sample(lam, 4))

    def test_key_offset_reproduces_slice(self, be):
        lam = np.full(50, 2.5)
        full = be.poisson_sample(lam, 9)
        np.testing.assert_array_equal(be.poisson_sample(lam[20:], 9, key0=20), full[20:])

    def test_zero_mean_is_zero(self, be):
        assert (be.poisson_sample(np.zeros(100), 1) == 0).all()

    @pytest.mark.parametrize("lam", [0.7, 6.0, 25.0, 400.0])
    def test_mean_and_variance(self, be, lam):
        n = 100_000
        x = be.poisson_sample(np.full(n, lam), 21).astype(np.float64)
        # 5-sigma CLT bounds on mean and variance
        assert abs(x.mean() - lam) < 5 * np.sqrt(lam / n)
        assert abs(x.var() - lam) < 5 * np.sqrt((2 * lam**2 + lam) / n)

    def test_small_mean_chi_square(self, be):
        lam, n = 3.0, 50_000
        x = be.poisson_sample(np.full(n, lam), 5)
        obs = np.bincount(x, minlength=12)[:12].astype(float)
        obs[-1] += (x >= 12).sum()
        p = stats.poisson.pmf(np.arange(12), lam)
        p[-1] += stats.poisson.sf(11, lam)
        assert stats.chisquare(obs, n * p).pvalue > 1e-4


class TestDispatch:
    def test_backend_name(self):
        assert kernels.BACKEND in ("python", "cython")

    def test_box_sum_oracle(self, rng):
        img = rng.random((9, 6))
        r = 2
        pad = np.pad(img, r, mode="edge")
        ref = np.array([[pad[i:i + 2 * r + 1, j:j + 2 * r + 1].sum() for j in range(6)] for i in range(9)])
        np.testing.assert_allclose(kernels.box_sum(img, r), ref, rtol=1e-12)
