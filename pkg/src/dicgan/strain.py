"""Small-strain kinematics: finite-difference strain tensor and von Mises
equivalent strain, plus a differentiable variant usable as the third input
channel of the physics-guided discriminator.

Array layout: fields are indexed [row, col] = [y, x], so d/dx differentiates
along axis -1 and d/dy along axis -2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .errors import ShapeError
from .fields import DisplacementField

VM_FACTOR = 2.0 / np.sqrt(3.0)


@dataclass
class VmConfig:
    delta: float = 1e-8       # square-root smoothing; keeps d(sqrt)/dx bounded
    h: float = 1.0            # grid step (pixels on scaled data, mm for analysis)
    symmetric: bool = True    # symmetric shear vs one-sided du_x/dy
    strain_norm: float = 1.0  # divides the strain channel before the discriminator

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.strain_norm <= 0:
            raise ValueError("strain_norm must be positive")
        if self.h <= 0:
            raise ValueError("h must be positive")


@dataclass
class StrainFields:
    eps_xx: np.ndarray
    eps_yy: np.ndarray
    eps_xy: np.ndarray
    h: float
    symmetric: bool


def _fwd_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Forward differences; the last slice replicates its predecessor so the
    output keeps the input shape."""
    d = np.diff(u, axis=axis) / h
    last = np.take(d, [-1], axis=axis)
    return np.concatenate([d, last], axis=axis)


def strain_fields(field: DisplacementField, cfg: VmConfig) -> StrainFields:
    h_, w_ = field.shape
    if h_ < 2 or w_ < 2:
        raise ShapeError(f"strain needs at least 2x2 grid, got {h_}x{w_}")
    duxdx = _fwd_diff(field.u_x, -1, cfg.h)
    duydy = _fwd_diff(field.u_y, -2, cfg.h)
    duxdy = _fwd_diff(field.u_x, -2, cfg.h)
    if cfg.symmetric:
        duydx = _fwd_diff(field.u_y, -1, cfg.h)
        exy = 0.5 * (duxdy + duydx)
    else:
        exy = duxdy
    return StrainFields(duxdx, duydy, exy, h=cfg.h, symmetric=cfg.symmetric)


def von_mises(strains: StrainFields, cfg: VmConfig) -> np.ndarray:
    """Equivalent strain under volume constancy (nu = 1/2), smoothed root."""
    xx, yy, xy = strains.eps_xx, strains.eps_yy, strains.eps_xy
    return VM_FACTOR * np.sqrt(xx * xx + yy * yy + xy * xy + xx * yy + cfg.delta)


def von_mises_field(field: DisplacementField, cfg: VmConfig) -> np.ndarray:
    return von_mises(strain_fields(field, cfg), cfg)


# ---------------------------------------------------------------------------
# graph-mode variant


def _fwd_diff_t(u: tc.Tensor, axis: int, h: float) -> tc.Tensor:
    n = u.shape[axis]
    hi = tc.slice_axis(u, axis, 1, n)
    lo = tc.slice_axis(u, axis, 0, n - 1)
    d = tc.mul(tc.add(hi, tc.mul(lo, -1.0)), 1.0 / h)
    last = tc.slice_axis(d, axis, n - 2, n - 1)
    return tc.concat([d, last], axis=axis)


def strain_feature(x: tc.Tensor, cfg: VmConfig) -> tc.Tensor:
    """Differentiable von Mises channel for N x 2 x H x W displacement batches.

    Same arithmetic as strain_fields -> von_mises, divided by strain_norm;
    gradients flow back to the displacements.
    """
    if x.data.ndim != 4 or x.data.shape[1] != 2:
        raise ShapeError(f"strain_feature expects N x 2 x H x W, got {x.shape}")
    ux = tc.slice_axis(x, 1, 0, 1)
    uy = tc.slice_axis(x, 1, 1, 2)
    exx = _fwd_diff_t(ux, 3, cfg.h)
    eyy = _fwd_diff_t(uy, 2, cfg.h)
    duxdy = _fwd_diff_t(ux, 2, cfg.h)
    if cfg.symmetric:
        duydx = _fwd_diff_t(uy, 3, cfg.h)
        exy = tc.mul(tc.add(duxdy, duydx), 0.5)
    else:
        exy = duxdy
    ssum = tc.add(tc.add(tc.add(tc.mul(exx, exx), tc.mul(eyy, eyy)),
                         tc.mul(exy, exy)), tc.mul(exx, eyy))
    vm = tc.mul(tc.sqrt(tc.add(ssum, cfg.delta)), VM_FACTOR)
    return tc.mul(vm, 1.0 / cfg.strain_norm)


def calibrate_strain_norm(samples: np.ndarray, cfg: VmConfig,
                          percentile: float = 99.5) -> float:
    """Fix the strain-channel divisor as a high quantile of the real corpus'
    von Mises strain, so the channel has displacement-like dynamic range."""
    vms = []
    for s in samples:
        f = DisplacementField(s[0], s[1], scaled=True)
        vms.append(von_mises_field(f, cfg))
    val = float(np.percentile(np.stack(vms), percentile))
    return val if val > 0 else 1.0
