"""Multi-scale sliced Wasserstein distance between two field datasets.

Protocol: build a Laplacian pyramid per dataset, draw random 7x7 patch
descriptors per level, normalize them per channel, then average 1-D
Wasserstein distances over random unit projections.  Repeated with fresh
draws and averaged per level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import correlate1d

from . import rng as rngmod
from .errors import ShapeError

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
PATCH = 7
BASE_PATCH_COUNT = 128  # at the coarsest 16x16 level; doubles per level
MIN_LEVEL_RES = 16


def _smooth(x: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial smoothing with reflected borders (NCHW)."""
    x = correlate1d(x, BINOMIAL5, axis=-1, mode="reflect")
    return correlate1d(x, BINOMIAL5, axis=-2, mode="reflect")


def _pyr_down(x: np.ndarray) -> np.ndarray:
    return _smooth(x)[..., ::2, ::2]


def _pyr_up(x: np.ndarray) -> np.ndarray:
    up = np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)
    return _smooth(up)


@dataclass
class LaplacianPyramid:
    """Band-pass levels finest-first; the last entry is the low-pass residual."""

    levels: list

    @property
    def resolutions(self):
        return [lv.shape[-1] for lv in self.levels]

    def reconstruct(self) -> np.ndarray:
        cur = self.levels[-1]
        for band in reversed(self.levels[:-1]):
            cur = band + _pyr_up(cur)
        return cur


def default_levels(resolution: int) -> int:
    if resolution < MIN_LEVEL_RES or resolution & (resolution - 1):
        raise ShapeError(f"resolution {resolution} is not a power of two >= {MIN_LEVEL_RES}")
    return int(np.log2(resolution // MIN_LEVEL_RES)) + 1


def laplacian_pyramid(data: np.ndarray, levels: int) -> LaplacianPyramid:
    if data.ndim != 4:
        raise ShapeError(f"expected N x C x H x W, got {data.shape}")
    res = data.shape[-1]
    if res != MIN_LEVEL_RES * 2 ** (levels - 1):
        raise ShapeError(f"resolution {res} does not match {levels} levels "
                         f"(need {MIN_LEVEL_RES * 2 ** (levels - 1)})")
    out = []
    cur = data
    for _ in range(levels - 1):
        down = _pyr_down(cur)
        out.append(cur - _pyr_up(down))
        cur = down
    out.append(cur)
    return LaplacianPyramid(out)


@dataclass
class PatchDescriptorSet:
    descriptors: np.ndarray  # count x (C * 7 * 7)
    level_id: int
    channel_mean: np.ndarray
    channel_std: np.ndarray


def extract_patches(level: np.ndarray, count: int, seed_or_rng,
                    level_id: int = 0) -> PatchDescriptorSet:
    """Uniform random 7x7 patches over (sample, position), then per-channel
    normalization of the whole set to mean 0 / std 1."""
    n, c, h, w = level.shape
    if h < PATCH or w < PATCH:
        raise ShapeError(f"level extent {h}x{w} below patch size {PATCH}")
    gen = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else rngmod.stream(seed_or_rng, "patches", level_id)
    si = gen.integers(0, n, size=count)
    pi = gen.integers(0, h - PATCH + 1, size=count)
    pj = gen.integers(0, w - PATCH + 1, size=count)
    patches = np.empty((count, c, PATCH, PATCH), dtype=np.float64)
    for t in range(count):
        patches[t] = level[si[t], :, pi[t]:pi[t] + PATCH, pj[t]:pj[t] + PATCH]
    mean = patches.mean(axis=(0, 2, 3))
    std = patches.std(axis=(0, 2, 3))
    norm = patches - mean[None, :, None, None]
    for ch in range(c):
        if std[ch] > 0:
            norm[:, ch] /= std[ch]
        else:
            norm[:, ch] = 0.0  # degenerate constant channel
    return PatchDescriptorSet(norm.reshape(count, c * PATCH * PATCH),
                              level_id, mean, std)


def sliced_wasserstein(x: PatchDescriptorSet, y: PatchDescriptorSet,
                       n_slices: int = 512, seed_or_rng=0) -> float:
    """sqrt of the mean (over random unit directions) of the mean squared
    difference of sorted 1-D projections."""
    dx, dy = x.descriptors, y.descriptors
    if dx.shape != dy.shape:
        raise ShapeError(f"descriptor sets differ: {dx.shape} vs {dy.shape}")
    gen = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else rngmod.stream(seed_or_rng, "slices")
    dirs = gen.standard_normal((n_slices, dx.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = np.sort(dx @ dirs.T, axis=0)
    py = np.sort(dy @ dirs.T, axis=0)
    return float(np.sqrt(np.mean((px - py) ** 2)))


def patch_schedule(levels: int) -> list:
    """128 patches at the 16x16 level, doubling per level (coarse -> fine)."""
    return [BASE_PATCH_COUNT * 2 ** i for i in range(levels)]


@dataclass
class SwdResult:
    resolutions: list          # finest-first
    per_level: list            # mean over repetitions, same order
    mean: float
    per_rep: np.ndarray        # repeats x levels
    patch_counts: list
    n_slices: int
    repeats: int
    seed: int

    def scaled(self, factor: float = 1e3) -> dict:
        return {"per_level_x1e3": [v * factor for v in self.per_level],
                "mean_x1e3": self.mean * factor}


def swd_protocol(real: np.ndarray,
                 fake: Union[np.ndarray, Callable[[int, int], np.ndarray]],
                 seed: int = 0, levels: Optional[int] = None,
                 n_slices: int = 512, repeats: int = 10) -> SwdResult:
    """Average per-level SWDs over ``repeats`` runs with fresh patch draws
    (and fresh fake samples when ``fake`` is a sampler callable)."""
    real = np.asarray(real, dtype=np.float64)
    n = real.shape[0]
    res = real.shape[-1]
    if levels is None:
        levels = default_levels(res)
    counts_coarse_first = patch_schedule(levels)
    counts = list(reversed(counts_coarse_first))  # align with finest-first pyramid
    pyr_real = laplacian_pyramid(real, levels)

    rows = np.zeros((repeats, levels))
    for rep in range(repeats):
        if callable(fake):
            fake_arr = np.asarray(fake(n, int(rngmod.stream(seed, "fake", rep).integers(0, 2 ** 31))),
                                  dtype=np.float64)
        else:
            fake_arr = np.asarray(fake, dtype=np.float64)
        if fake_arr.shape[-1] != res:
            raise ShapeError(f"fake resolution {fake_arr.shape[-1]} != real {res}")
        pyr_fake = laplacian_pyramid(fake_arr, levels)
        for lv in range(levels):
            # shared patch stream: identical datasets give identically drawn
            # patches and therefore SWD 0
            prng = rngmod.stream(seed, "patches", rep, lv)
            frng = rngmod.stream(seed, "patches", rep, lv)
            px = extract_patches(pyr_real.levels[lv], counts[lv], prng, lv)
            py = extract_patches(pyr_fake.levels[lv], counts[lv], frng, lv)
            srng = rngmod.stream(seed, "slices", rep, lv)
            rows[rep, lv] = sliced_wasserstein(px, py, n_slices, srng)

    per_level = rows.mean(axis=0).tolist()
    return SwdResult(resolutions=pyr_real.resolutions, per_level=per_level,
                     mean=float(np.mean(per_level)), per_rep=rows,
                     patch_counts=counts, n_slices=n_slices, repeats=repeats,
                     seed=seed)
