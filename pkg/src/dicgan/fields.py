"""Displacement-field data model, ingestion, scaling, synthesis, and storage.

The sample unit everywhere is a 2-channel (u_x, u_y) field on a regular
pixel grid.  Datasets are stored in the FTC1 container, a tiny named-tensor
format defined here so files stay language neutral.
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import rng as rngmod
from .errors import DataError, NumericalError, ShapeError

FTC_MAGIC = b"FTC1"
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class DatasetMeta:
    specimen: str = ""
    max_stress_mpa: Optional[float] = None
    load_ratio: Optional[float] = None
    extent_mm: Optional[float] = None
    source: str = "synthetic"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.load_ratio is not None and not -1.0 < self.load_ratio < 1.0:
            raise DataError(f"load ratio R={self.load_ratio} outside (-1, 1)")
        if self.extent_mm is not None and self.extent_mm <= 0:
            raise DataError("region extent must be positive")


@dataclass
class DisplacementField:
    """Planar displacements on an H x W grid; mm before scaling, [-1,1] after."""

    u_x: np.ndarray
    u_y: np.ndarray
    pixel_pitch: float = 1.0
    scaled: bool = False
    scale_record: Optional[dict] = None  # {"u_x": (min,max), "u_y": (min,max)}
    degenerate: bool = False

    def __post_init__(self):
        self.u_x = np.asarray(self.u_x, dtype=np.float64)
        self.u_y = np.asarray(self.u_y, dtype=np.float64)
        if self.u_x.shape != self.u_y.shape or self.u_x.ndim != 2:
            raise ShapeError(f"u_x/u_y shapes differ: {self.u_x.shape} vs {self.u_y.shape}")
        if self.pixel_pitch <= 0:
            raise DataError("pixel_pitch must be positive")

    @property
    def shape(self):
        return self.u_x.shape

    def as_array(self) -> np.ndarray:
        """Stack to the 2 x H x W layout used by the networks."""
        return np.stack([self.u_x, self.u_y])

    def validate(self):
        if not (np.all(np.isfinite(self.u_x)) and np.all(np.isfinite(self.u_y))):
            raise NumericalError("displacement field contains NaN/Inf")


@dataclass
class FieldDataset:
    fields: list
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        if not self.fields:
            return  # empty datasets only arise from sample(count=0)
        shape = self.fields[0].shape
        for f in self.fields:
            if f.shape != shape:
                raise ShapeError(f"inhomogeneous dataset: {f.shape} vs {shape}")

    def __len__(self):
        return len(self.fields)

    @property
    def resolution(self):
        if not self.fields:
            raise DataError("empty dataset has no resolution")
        return self.fields[0].shape

    def as_array(self) -> np.ndarray:
        """N x 2 x H x W stack of all samples."""
        return np.stack([f.as_array() for f in self.fields])


def dataset_from_array(arr: np.ndarray, meta: Optional[DatasetMeta] = None,
                       scaled: bool = False) -> FieldDataset:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 4 or (arr.shape[0] and arr.shape[1] != 2):
        raise ShapeError(f"expected N x 2 x H x W array, got {arr.shape}")
    fields = [DisplacementField(a[0], a[1], scaled=scaled) for a in arr]
    return FieldDataset(fields, meta or DatasetMeta())


# ---------------------------------------------------------------------------
# min-max scaling


def _scale_channel(u: np.ndarray):
    umin, umax = float(u.min()), float(u.max())
    if umax == umin:
        # degenerate channel: map to zeros so synthetic edge cases stay usable
        return np.zeros_like(u), (umin, umax), True
    return 2.0 * (u - umin) / (umax - umin) - 1.0, (umin, umax), False


def minmax_scale(f: DisplacementField) -> DisplacementField:
    """Map each channel's min/max to -1/+1 (per-sample, per-channel)."""
    if f.scaled:
        raise DataError("field is already scaled")
    sx, recx, degx = _scale_channel(f.u_x)
    sy, recy, degy = _scale_channel(f.u_y)
    return DisplacementField(sx, sy, pixel_pitch=f.pixel_pitch, scaled=True,
                             scale_record={"u_x": recx, "u_y": recy},
                             degenerate=degx or degy)


def minmax_unscale(f: DisplacementField) -> DisplacementField:
    if not f.scaled or f.scale_record is None:
        raise DataError("field is not scaled / missing scale record")

    def undo(u, rec):
        umin, umax = rec
        if umax == umin:
            return np.full_like(u, umin)
        return (u + 1.0) * 0.5 * (umax - umin) + umin

    return DisplacementField(undo(f.u_x, f.scale_record["u_x"]),
                             undo(f.u_y, f.scale_record["u_y"]),
                             pixel_pitch=f.pixel_pitch, scaled=False)


def scale_dataset(ds: FieldDataset, per_dataset: bool = False) -> FieldDataset:
    """Scale every sample; optionally share one min/max across the dataset."""
    if not per_dataset:
        return FieldDataset([minmax_scale(f) for f in ds.fields], ds.meta)
    ax = np.stack([f.u_x for f in ds.fields])
    ay = np.stack([f.u_y for f in ds.fields])
    recs = {"u_x": (float(ax.min()), float(ax.max())),
            "u_y": (float(ay.min()), float(ay.max()))}
    out = []
    for f in ds.fields:
        def apply(u, rec):
            umin, umax = rec
            if umax == umin:
                return np.zeros_like(u)
            return 2.0 * (u - umin) / (umax - umin) - 1.0
        out.append(DisplacementField(apply(f.u_x, recs["u_x"]), apply(f.u_y, recs["u_y"]),
                                     pixel_pitch=f.pixel_pitch, scaled=True,
                                     scale_record=dict(recs)))
    return FieldDataset(out, ds.meta)


# ---------------------------------------------------------------------------
# scattered-data ingestion


def _read_scatter_csv(path) -> np.ndarray:
    expected = ["x_mm", "y_mm", "ux_mm", "uy_mm"]
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        if [h.strip() for h in header] != expected:
            raise DataError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    if len(rows) < 4:
        raise DataError(f"{path}: need at least 4 points, got {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def _is_rectilinear(x: np.ndarray, y: np.ndarray):
    xs = np.unique(x)
    ys = np.unique(y)
    if xs.size * ys.size != x.size:
        return None
    order = np.lexsort((x, y))
    gx, gy = np.meshgrid(xs, ys)
    if np.array_equal(x[order], gx.ravel()) and np.array_equal(y[order], gy.ravel()):
        return xs, ys, order
    return None


def idw_interpolate(points: np.ndarray, values: np.ndarray, queries: np.ndarray,
                    k: int = 4, power: float = 2.0) -> np.ndarray:
    """Inverse-distance weighting over the k nearest points, exact pass-through
    when a query coincides with a sample."""
    tree = cKDTree(points)
    k = min(k, len(points))
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    exact = dist[:, 0] < 1e-12
    with np.errstate(divide="ignore"):
        w = 1.0 / dist ** power
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return (values[idx] * w[..., None]).sum(axis=1)


def ingest_scatter_csv(path, grid: int, extent_mm: float) -> DisplacementField:
    """Resample scattered DIC points onto an equidistant grid x grid pixel grid
    covering extent_mm from the data's lower-left corner."""
    if grid < 2 or extent_mm <= 0:
        raise DataError("grid must be >= 2 and extent positive")
    data = _read_scatter_csv(path)
    x, y, ux, uy = data.T
    x0, y0 = x.min(), y.min()
    if x.max() == x0 or y.max() == y0:
        raise DataError(f"{path}: degenerate (empty) point region")
    gx = x0 + np.linspace(0.0, extent_mm, grid)
    gy = y0 + np.linspace(0.0, extent_mm, grid)
    pitch = extent_mm / (grid - 1)

    rect = _is_rectilinear(x, y)
    if rect is not None:
        xs, ys, order = rect
        vx = ux[order].reshape(ys.size, xs.size)
        vy = uy[order].reshape(ys.size, xs.size)
        from scipy.interpolate import RegularGridInterpolator
        qy, qx = np.meshgrid(gy, gx, indexing="ij")
        q = np.stack([qy.ravel(), qx.ravel()], axis=1)
        fx = RegularGridInterpolator((ys, xs), vx, bounds_error=False, fill_value=None)
        fy = RegularGridInterpolator((ys, xs), vy, bounds_error=False, fill_value=None)
        gux = fx(q).reshape(grid, grid)
        guy = fy(q).reshape(grid, grid)
    else:
        qy, qx = np.meshgrid(gy, gx, indexing="ij")
        q = np.stack([qx.ravel(), qy.ravel()], axis=1)
        vals = idw_interpolate(np.stack([x, y], axis=1), np.stack([ux, uy], axis=1), q)
        gux = vals[:, 0].reshape(grid, grid)
        guy = vals[:, 1].reshape(grid, grid)
    return DisplacementField(gux, guy, pixel_pitch=pitch)


# ---------------------------------------------------------------------------
# synthetic mode-I corpus


@dataclass
class SynthFieldSpec:
    grid: int = 16
    tip_x: float = 0.5        # crack-tip abscissa, fraction of width
    crack_y: float = 0.5      # crack line ordinate, fraction of height
    intensity: float = 1.0    # stress-intensity-like amplitude (arbitrary units)
    poisson: float = 0.33
    shear_modulus: float = 1.0
    noise_sigma: float = 0.0
    bias_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tip_x < 1.0:
            raise DataError("tip_x must lie strictly inside (0, 1)")
        if self.noise_sigma < 0 or self.bias_amp < 0:
            raise DataError("noise_sigma and bias_amp must be non-negative")


def mode1_displacements(x: np.ndarray, y: np.ndarray, spec: SynthFieldSpec):
    """Asymptotic plane-stress mode-I crack-tip field, crack along -x from the tip."""
    kappa = (3.0 - spec.poisson) / (1.0 + spec.poisson)
    dx = x - spec.tip_x
    dy = y - spec.crack_y
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    amp = spec.intensity / (2.0 * spec.shear_modulus) * np.sqrt(r / (2.0 * np.pi))
    s, c = np.sin(theta / 2.0), np.cos(theta / 2.0)
    ux = amp * c * ((kappa - 1.0) / 2.0 + s * s)
    uy = amp * s * ((kappa + 1.0) / 2.0 - c * c)
    return ux, uy


def _smooth_bias(grid: int, amp: float, gen: np.random.Generator) -> np.ndarray:
    """Random low-frequency cosine-mode bias of the given amplitude."""
    y, x = np.meshgrid(np.linspace(0, 1, grid), np.linspace(0, 1, grid), indexing="ij")
    out = np.zeros((grid, grid))
    for p in range(3):
        for q in range(3):
            out += gen.standard_normal() * np.cos(np.pi * p * x) * np.cos(np.pi * q * y)
    return amp * out / 3.0


def synth_mode1_field(spec: SynthFieldSpec) -> DisplacementField:
    """Deterministic synthetic DIC-like sample: crack-tip field + noise + bias."""
    g = spec.grid
    y, x = np.meshgrid(np.linspace(0, 1, g), np.linspace(0, 1, g), indexing="ij")
    ux, uy = mode1_displacements(x, y, spec)
    gen = rngmod.stream(spec.seed, "synth-field")
    if spec.bias_amp > 0:
        ux = ux + _smooth_bias(g, spec.bias_amp, gen)
        uy = uy + _smooth_bias(g, spec.bias_amp, gen)
    if spec.noise_sigma > 0:
        ux = ux + spec.noise_sigma * gen.standard_normal((g, g))
        uy = uy + spec.noise_sigma * gen.standard_normal((g, g))
    return DisplacementField(ux, uy, pixel_pitch=1.0 / (g - 1))


def synth_dataset(count: int, base: SynthFieldSpec, seed: int,
                  tip_range=(0.2, 0.8), intensity_range=(0.5, 1.5)) -> FieldDataset:
    """Desk-scale stand-in corpus: crack length and load amplitude vary per sample."""
    if count < 1:
        raise DataError("count must be >= 1")
    gen = rngmod.stream(seed, "synth-dataset")
    fields = []
    for i in range(count):
        spec = replace(base,
                       tip_x=float(gen.uniform(*tip_range)),
                       intensity=float(gen.uniform(*intensity_range)),
                       seed=int(gen.integers(0, 2 ** 31)))
        fields.append(synth_mode1_field(spec))
    meta = DatasetMeta(specimen="synthetic mode-I desk corpus", source="synthetic", seed=seed)
    return FieldDataset(fields, meta)


# ---------------------------------------------------------------------------
# FTC1 container


def write_atomic(path, data: bytes) -> None:
    """Write bytes via a temp file + rename so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ftc-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ftc_bytes(tensors: dict) -> bytes:
    """Serialize name -> ndarray (f32/f64) to the FTC1 wire format."""
    buf = io.BytesIO()
    buf.write(FTC_MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            raise DataError(f"FTC1 supports f32/f64 only, got {arr.dtype} for {name!r}")
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"tensor {name!r} contains NaN/Inf")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise DataError(f"tensor name too long: {name[:32]!r}...")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        for ext in arr.shape:
            buf.write(struct.pack("<Q", ext))
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def save_ftc(path, tensors: dict) -> None:
    write_atomic(path, ftc_bytes(tensors))


def load_ftc(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    return ftc_from_bytes(raw, label=os.fspath(path))


def ftc_from_bytes(raw: bytes, label: str = "<bytes>") -> dict:
    if raw[:4] != FTC_MAGIC:
        raise DataError(f"{label}: bad magic {raw[:4]!r}")
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise DataError(f"{label}: truncated file at offset {off}")
        out = raw[off:off + n]
        off += n
        return out

    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise DataError(f"{label}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        if size > (1 << 40):
            raise DataError(f"{label}: extent overflow in {name!r}: {shape}")
        dt = np.dtype(_DTYPES[code])
        payload = take(size * dt.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if off != len(raw):
        raise DataError(f"{label}: {len(raw) - off} trailing bytes")
    return tensors


def save_dataset(path, ds: FieldDataset, dtype=np.float64) -> None:
    save_ftc(path, {"u": ds.as_array().astype(dtype)})


def load_dataset(path, scaled: bool = False) -> FieldDataset:
    tensors = load_ftc(path)
    if "u" not in tensors:
        raise DataError(f"{path}: no tensor named 'u'")
    return dataset_from_array(np.asarray(tensors["u"], dtype=np.float64), scaled=scaled)
