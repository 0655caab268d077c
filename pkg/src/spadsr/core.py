"""Domain types and file I/O shared by every other module.

File formats
------------
SPDT
    Binary tensor container: magic ``b"SPDT"``, version (u16 LE, = 1),
    dtype code (u8: 0 = f32 LE, 1 = u32 LE), ndim (u8), ``ndim`` extents
    (u64 LE each), then the row-major payload.
PGM
    Binary ``P5`` greymap, 8- or 16-bit (big-endian, per the netpbm spec).
PFM
    Single-channel ``Pf`` float map. A negative scale marks little-endian
    data; rows are stored bottom to top.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPDT_MAGIC = b"SPDT"
SPDT_VERSION = 1
_SPDT_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u4")}
_SPDT_CODES = {np.dtype(np.float32): 0, np.dtype(np.uint32): 1}

DEFAULT_IRF_SIGMA = 0.5714


class FormatError(ValueError):
    """A file does not follow the expected format."""


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DtypeMismatchError(FormatError):
    pass


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class HistogramCube:
    """Photon counts per pixel and time bin, shape ``[H, W, T]``."""

    counts: np.ndarray
    bin_width: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise ValueError(f"histogram cube must be 3-D, got shape {c.shape}")
        if c.shape[2] < 3:
            raise ValueError("histogram cube needs at least 3 time bins")
        if not np.issubdtype(c.dtype, np.unsignedinteger) and c.size and c.min() < 0:
            raise ValueError("photon counts must be non-negative")
        c = np.array(c, dtype=np.uint32)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def shape(self):
        return self.counts.shape

    @property
    def bins(self) -> int:
        return self.counts.shape[2]


@dataclass(frozen=True)
class DepthMap:
    """Normalized depth in ``[0, 1]``; invalid pixels hold 0."""

    values: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {v.shape}")
        m = np.ones(v.shape, bool) if self.valid_mask is None else np.array(self.valid_mask, bool)
        if m.shape != v.shape:
            raise ValueError("valid_mask shape does not match values")
        v[~m] = 0.0
        if m.any() and (v[m].min() < 0.0 or v[m].max() > 1.0):
            raise ValueError("valid depth values must lie in [0, 1]")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid_mask", m)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class IntensityMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"intensity map must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("intensity values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FeatureSet:
    """Network input bundle.

    ``d1``..``d4`` sit at 1/2, 1/4, 1/8 and 1/16 of the full resolution.
    ``target_shape`` is the unpadded output size; maps may be larger when
    the measurement was padded for divisibility.
    """

    first_depth: DepthMap
    second_depth: DepthMap
    d1: DepthMap
    d2: DepthMap
    d3: DepthMap
    d4: DepthMap
    intensity: IntensityMap
    crop_range: tuple[int, int]
    target_shape: tuple[int, int] = field(default=None)

    def __post_init__(self):
        full = self.first_depth.shape
        if self.second_depth.shape != full or self.intensity.shape != full:
            raise ValueError("first depth, second depth and intensity must share dims")
        for k, d in enumerate(self.scales, start=1):
            if d.shape != (full[0] >> k, full[1] >> k) or full[0] % (1 << k) or full[1] % (1 << k):
                raise ValueError(f"d{k} has shape {d.shape}, expected full/{1 << k}")
        if self.target_shape is None:
            object.__setattr__(self, "target_shape", tuple(full))

    @property
    def scales(self):
        return (self.d1, self.d2, self.d3, self.d4)


@dataclass(frozen=True)
class Tensor:
    """Row-major array with explicit extents."""

    data: np.ndarray
    dims: tuple[int, ...] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        dims = tuple(data.shape) if self.dims is None else tuple(int(d) for d in self.dims)
        if math.prod(dims) != data.size:
            raise ValueError(f"dims {dims} do not match {data.size} elements")
        object.__setattr__(self, "data", data.reshape(dims))
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True)
class NoiseSpec:
    """Simulation noise level: signal photons per pixel, signal-to-background
    ratio, Gaussian IRF width in bins, and RNG seed."""

    ppp: float
    sbr: float
    sigma_bins: float = DEFAULT_IRF_SIGMA
    seed: int = 0

    def __post_init__(self):
        for name in ("ppp", "sbr", "sigma_bins"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# SPDT tensors


def write_tensor(path, tensor) -> None:
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    code = _SPDT_CODES.get(arr.dtype)
    if code is None:
        raise DtypeMismatchError(f"SPDT stores float32 or uint32, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = SPDT_MAGIC + struct.pack("<HBB", SPDT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_SPDT_DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path, dtype=None) -> Tensor:
    """Read an SPDT file. ``dtype`` optionally pins the expected payload type."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise TruncatedPayloadError("file shorter than the SPDT header")
    if raw[:4] != SPDT_MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}")
    version, code, ndim = struct.unpack("<HBB", raw[4:8])
    if version != SPDT_VERSION:
        raise FormatError(f"unsupported SPDT version {version}")
    if code not in _SPDT_DTYPES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    file_dtype = _SPDT_DTYPES[code]
    if dtype is not None and np.dtype(dtype).newbyteorder("<") != file_dtype:
        raise DtypeMismatchError(f"expected {np.dtype(dtype)}, file holds {file_dtype}")
    end = 8 + 8 * ndim
    if len(raw) < end:
        raise TruncatedPayloadError("truncated extents")
    dims = struct.unpack(f"<{ndim}Q", raw[8:end])
    nbytes = math.prod(dims) * file_dtype.itemsize
    if len(raw) < end + nbytes:
        raise TruncatedPayloadError(f"payload has {len(raw) - end} bytes, expected {nbytes}")
    if len(raw) > end + nbytes:
        raise FormatError("trailing bytes after payload")
    data = np.frombuffer(raw, dtype=file_dtype, count=math.prod(dims), offset=end)
    return Tensor(data.astype(file_dtype.newbyteorder("="), copy=True), dims)


# ---------------------------------------------------------------------------
# PGM / PFM


def _pnm_header(raw: bytes, ntokens: int):
    tokens, pos = [], 0
    while len(tokens) < ntokens:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(raw, pos)
        pos = m.end()
        m = re.compile(rb"\S+").match(raw, pos)
        if m is None:
            raise FormatError("truncated header")
        tokens.append(m.group())
        pos = m.end()
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(samples, maxval)`` from a binary PGM."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    (_, w, h, maxval), start = _pnm_header(raw, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise FormatError(f"bad maxval {maxval}")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    if len(raw) - start < w * h * dt.itemsize:
        raise TruncatedPayloadError(f"{path}: truncated raster")
    data = np.frombuffer(raw, dtype=dt, count=w * h, offset=start).reshape(h, w)
    return data.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path, samples, maxval=None) -> None:
    samples = np.asarray(samples)
    if maxval is None:
        maxval = 255 if samples.dtype == np.uint8 else 65535
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = samples.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + samples.astype(dt).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] == b"PF":
        raise FormatError(f"{path}: colour PFM not supported")
    if raw[:2] != b"Pf":
        raise FormatError(f"{path}: not a greyscale PFM")
    (_, w, h, scale), start = _pnm_header(raw, 4)
    w, h, scale = int(w), int(h), float(scale)
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    if len(raw) - start < w * h * 4:
        raise TruncatedPayloadError(f"{path}: truncated raster")
    data = np.frombuffer(raw, dtype=dt, count=w * h, offset=start).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_pfm(path, values) -> None:
    values = np.asarray(values, dtype="<f4")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(values).tobytes())


def repair_nonfinite(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replace NaN/Inf with the median of finite 3x3 neighbours.

    Returns ``(repaired, valid)``; pixels without any finite neighbour
    stay invalid and are set to 0.
    """
    v = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(v)
    out = np.where(bad, 0.0, v)
    valid = ~bad
    if not bad.any():
        return out, valid
    padded = np.pad(np.where(bad, np.nan, v), 1, constant_values=np.nan)
    h, w = v.shape
    for i, j in zip(*np.nonzero(bad)):
        window = padded[i : i + 3, j : j + 3]
        finite = window[np.isfinite(window)]
        if finite.size:
            out[i, j] = np.median(finite)
            valid[i, j] = True
    return out, valid


def read_image(path):
    """Load a PGM as an :class:`IntensityMap` or a PFM as a :class:`DepthMap`.

    PGM samples are divided by the header maxval. PFM depth is repaired for
    non-finite pixels and min-max rescaled over valid pixels only when it
    falls outside ``[0, 1]``.
    """
    path = Path(path)
    head = path.read_bytes()[:2]
    if head == b"P5":
        samples, maxval = read_pgm(path)
        return IntensityMap(samples.astype(np.float64) / maxval)
    if head in (b"Pf", b"PF"):
        values, valid = repair_nonfinite(read_pfm(path))
        if valid.any():
            lo, hi = values[valid].min(), values[valid].max()
            if lo < 0.0 or hi > 1.0:
                values = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
        return DepthMap(np.clip(values, 0.0, 1.0) if valid.any() else values, valid)
    raise FormatError(f"{path}: unsupported image format")


def write_image(path, image, bits: int = 16) -> None:
    """Write an IntensityMap as PGM (``bits`` 8 or 16) or a DepthMap as PFM."""
    if isinstance(image, IntensityMap):
        maxval = 255 if bits == 8 else 65535
        samples = np.round(image.values * maxval)
        write_pgm(path, samples.astype(np.uint8 if bits == 8 else np.uint16), maxval)
    elif isinstance(image, DepthMap):
        write_pfm(path, image.values)
    else:
        raise TypeError(f"cannot write {type(image).__name__}")


def write_depth_preview(path, depth: DepthMap) -> None:
    """8-bit PGM preview, depth 0..1 mapped linearly to 0..255."""
    samples = np.round(np.clip(depth.values, 0.0, 1.0) * 255)
    write_pgm(path, samples.astype(np.uint8), 255)
