import itertools

import numpy as np
import pytest

from dicgan import swd as sw
from dicgan.errors import ShapeError


class TestPyramid:
    def test_constant_dataset(self):
        data = np.full((3, 2, 64, 64), 0.4)
        pyr = sw.laplacian_pyramid(data, 3)
        for band in pyr.levels[:-1]:
            assert np.abs(band).max() < 1e-12
        assert np.allclose(pyr.levels[-1], 0.4)

    def test_resolution_list(self):
        data = np.zeros((1, 2, 256, 256))
        pyr = sw.laplacian_pyramid(data, 5)
        assert pyr.resolutions == [256, 128, 64, 32, 16]

    def test_reconstruction_identity(self, rng):
        data = rng.standard_normal((4, 2, 64, 64)).astype(np.float32)
        pyr = sw.laplacian_pyramid(data, 3)
        assert np.abs(pyr.reconstruct() - data).max() < 1e-6

    def test_resolution_mismatch(self):
        with pytest.raises(ShapeError):
            sw.laplacian_pyramid(np.zeros((1, 2, 48, 48)), 3)

    def test_default_levels(self):
        assert sw.default_levels(256) == 5
        assert sw.default_levels(16) == 1
        with pytest.raises(ShapeError):
            sw.default_levels(24)


class TestPatches:
    def test_counts_and_dims(self, rng):
        level = rng.standard_normal((5, 2, 16, 16))
        ps = sw.extract_patches(level, 128, 0)
        assert ps.descriptors.shape == (128, 2 * 49)

    def test_normalization_postcondition(self, rng):
        level = 3.0 + 2.0 * rng.standard_normal((5, 2, 16, 16))
        ps = sw.extract_patches(level, 256, 1)
        d = ps.descriptors.reshape(256, 2, 49)
        for c in range(2):
            assert abs(d[:, c].mean()) < 1e-4
            assert abs(d[:, c].std() - 1.0) < 1e-4

    def test_constant_level_degenerate(self):
        ps = sw.extract_patches(np.full((3, 2, 16, 16), 1.0), 64, 2)
        assert np.all(ps.descriptors == 0.0)

    def test_seed_determinism(self, rng):
        level = rng.standard_normal((4, 2, 32, 32))
        a = sw.extract_patches(level, 100, 7)
        b = sw.extract_patches(level, 100, 7)
        assert np.array_equal(a.descriptors, b.descriptors)

    def test_too_small_level(self):
        with pytest.raises(ShapeError):
            sw.extract_patches(np.zeros((1, 2, 5, 5)), 8, 0)


def _set(desc):
    return sw.PatchDescriptorSet(np.asarray(desc, dtype=np.float64), 0,
                                 np.zeros(1), np.ones(1))


class TestSlicedWasserstein:
    def test_zero_on_identical(self, rng):
        d = rng.standard_normal((20, 10))
        assert sw.sliced_wasserstein(_set(d), _set(d.copy()), 64, 0) == 0.0

    def test_single_pair_transport(self):
        x = _set([[0.0]])
        y = _set([[3.0]])
        # every unit direction in 1-D is +-1; |<0-3, theta>| = 3 either way
        assert sw.sliced_wasserstein(x, y, 16, 3) == pytest.approx(3.0)

    def test_sorted_pairing_is_permutation_minimum(self, rng):
        for _ in range(50):
            x = rng.standard_normal((4, 2))
            y = rng.standard_normal((4, 2))
            theta = rng.standard_normal(2)
            theta /= np.linalg.norm(theta)
            px, py = x @ theta, y @ theta
            best = min(np.sum((px - py[list(p)]) ** 2)
                       for p in itertools.permutations(range(4)))
            sorted_cost = np.sum((np.sort(px) - np.sort(py)) ** 2)
            assert sorted_cost == pytest.approx(best, abs=1e-12)

    def test_symmetry(self, rng):
        x = _set(rng.standard_normal((30, 8)))
        y = _set(rng.standard_normal((30, 8)))
        assert sw.sliced_wasserstein(x, y, 128, 5) == pytest.approx(
            sw.sliced_wasserstein(y, x, 128, 5))

    def test_size_mismatch(self, rng):
        with pytest.raises(ShapeError):
            sw.sliced_wasserstein(_set(rng.standard_normal((5, 3))),
                                  _set(rng.standard_normal((6, 3))), 8, 0)


class TestProtocol:
    def test_patch_schedule(self):
        assert sw.patch_schedule(5) == [128, 256, 512, 1024, 2048]
        assert sw.patch_schedule(2) == [128, 256]

    def test_real_vs_itself_zero(self, rng):
        data = rng.standard_normal((10, 2, 32, 32))
        res = sw.swd_protocol(data, data.copy(), seed=7, repeats=3, n_slices=32)
        assert all(v == 0.0 for v in res.per_level)
        assert res.mean == 0.0

    def test_monotone_under_noise(self):
        gen = np.random.default_rng(0)
        real = gen.standard_normal((20, 2, 32, 32))
        vals = []
        for sigma in (0.05, 0.1, 0.2):
            noisy = real + sigma * gen.standard_normal(real.shape)
            res = sw.swd_protocol(real, noisy, seed=1, repeats=3, n_slices=64)
            vals.append(res.per_level[0])  # finest level
        assert vals[0] < vals[1] < vals[2]

    def test_sampler_callable(self, rng):
        real = rng.standard_normal((8, 2, 16, 16))
        calls = []

        def sampler(n, seed):
            calls.append((n, seed))
            return np.random.default_rng(seed).standard_normal((n, 2, 16, 16))

        res = sw.swd_protocol(real, sampler, seed=2, repeats=4, n_slices=16)
        assert len(calls) == 4
        assert len({s for _, s in calls}) == 4  # fresh fake samples per repetition
        assert res.per_rep.shape == (4, 1)

    def test_determinism(self, rng):
        real = rng.standard_normal((8, 2, 16, 16))
        fake = rng.standard_normal((8, 2, 16, 16))
        a = sw.swd_protocol(real, fake, seed=3, repeats=2, n_slices=16)
        b = sw.swd_protocol(real, fake, seed=3, repeats=2, n_slices=16)
        assert a.per_level == b.per_level
