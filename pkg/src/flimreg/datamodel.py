"""Core data types and their on-disk formats.

Hypercubes live as a JSON manifest plus a raw little-endian blob; scalar
planes use a small binary format with an 8-byte magic; RGB images are plain
PNG.  All types are immutable after construction and safe to share across
threads.  The background convention is global: value 0 means "no data".
"""

import json
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    IoFailure,
    MissingFile,
    NegativeCount,
)

PLANE_MAGIC = b"FLIMPLN1"
DEFAULT_TIME_BIN_PS = 50.0
MEMMAP_THRESHOLD_BYTES = 256 * 1024 * 1024

KIND_INTENSITY = "intensity_counts"
KIND_LIFETIME = "lifetime_ns"
_KIND_CODES = {KIND_INTENSITY: 0, KIND_LIFETIME: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

_DTYPES = {"u16": np.dtype("<u2"), "f32": np.dtype("<f4")}


@dataclass(frozen=True)
class Hypercube:
    """4-D photon-count array indexed (x, y, spectral band, time bin).

    Attributes:
        counts: array of shape (width, height, spectral_bins, time_bins),
            non-negative and finite.
        wavelength_start_nm / wavelength_step_nm: spectral axis calibration.
        time_bin_ps: temporal bin width in picoseconds.
    """

    width: int
    height: int
    spectral_bins: int
    time_bins: int
    wavelength_start_nm: float
    wavelength_step_nm: float
    time_bin_ps: float
    counts: np.ndarray

    def __post_init__(self):
        for name in ("width", "height", "spectral_bins", "time_bins"):
            if getattr(self, name) <= 0:
                raise DimensionMismatch(f"{name} must be positive", field=name)
        if self.wavelength_step_nm <= 0:
            raise DimensionMismatch("wavelength_step_nm must be positive",
                                    field="wavelength_step_nm")
        if self.time_bin_ps <= 0:
            raise DimensionMismatch("time_bin_ps must be positive",
                                    field="time_bin_ps")
        shape = (self.width, self.height, self.spectral_bins, self.time_bins)
        if self.counts.shape != shape:
            raise DimensionMismatch(
                f"counts shape {self.counts.shape} != declared {shape}")
        if np.issubdtype(self.counts.dtype, np.floating):
            if not np.all(np.isfinite(self.counts)):
                raise NegativeCount("counts must be finite")
            if np.any(self.counts < 0):
                raise NegativeCount("counts must be non-negative")

    def wavelength_of(self, band: int) -> float:
        return self.wavelength_start_nm + band * self.wavelength_step_nm


@dataclass(frozen=True)
class ScalarPlane:
    """Single-channel 2-D image; values float32, shape (height, width).

    kind is either intensity_counts or lifetime_ns; lifetime values are
    physical nanoseconds, never display-scaled.  Background pixels hold 0.
    """

    kind: str
    values: np.ndarray
    wavelength_nm: float | None = None

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown plane kind {self.kind!r}")
        if self.values.ndim != 2:
            raise DimensionMismatch("plane values must be 2-D")
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if not np.all(np.isfinite(v)):
            raise NegativeCount("plane values must be finite")
        if np.any(v < 0):
            raise NegativeCount("plane values must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, pixels shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DimensionMismatch("pixels must have shape (h, w, 3)")
        object.__setattr__(
            self, "pixels", np.ascontiguousarray(self.pixels, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean mask gating an image of the same dimensions."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2:
            raise DimensionMismatch("mask must be 2-D")
        object.__setattr__(
            self, "bits", np.ascontiguousarray(self.bits, dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def load_hypercube(manifest_path: str | os.PathLike) -> Hypercube:
    """Load a hypercube from its JSON manifest + raw binary blob.

    The manifest declares dims, axis calibration, dtype (u16 or f32) and the
    data file (relative paths resolve against the manifest's directory).
    """
    manifest_path = os.fspath(manifest_path)
    if not os.path.isfile(manifest_path):
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"unreadable manifest {manifest_path}: {exc}") from exc

    try:
        width = int(man["width"])
        height = int(man["height"])
        spectral_bins = int(man["spectral_bins"])
        time_bins = int(man["time_bins"])
        wl_start = float(man["wavelength_start_nm"])
        wl_step = float(man["wavelength_step_nm"])
        dtype_name = man.get("dtype", "u16")
        data_file = man["data_file"]
    except KeyError as exc:
        raise CorruptHeader(f"manifest missing field {exc}") from exc

    if dtype_name not in _DTYPES:
        raise CorruptHeader(f"unsupported dtype {dtype_name!r}")
    if "time_bin_ps" in man:
        time_bin = float(man["time_bin_ps"])
    else:
        warnings.warn(
            f"manifest {manifest_path} omits time_bin_ps; "
            f"assuming {DEFAULT_TIME_BIN_PS} ps",
            stacklevel=2)
        time_bin = DEFAULT_TIME_BIN_PS

    dtype = _DTYPES[dtype_name]
    data_path = data_file
    if not os.path.isabs(data_path):
        data_path = os.path.join(os.path.dirname(manifest_path), data_path)
    if not os.path.isfile(data_path):
        raise MissingFile(f"data file not found: {data_path}")

    n_elem = width * height * spectral_bins * time_bins
    expected_bytes = n_elem * dtype.itemsize
    actual_bytes = os.path.getsize(data_path)
    if actual_bytes != expected_bytes:
        raise DimensionMismatch(
            f"data file holds {actual_bytes} bytes, "
            f"declared dims need {expected_bytes}")
    shape = (width, height, spectral_bins, time_bins)
    try:
        if dtype_name == "u16" and expected_bytes > MEMMAP_THRESHOLD_BYTES:
            # acquisition-scale cubes (GiB range) map read-only instead of
            # loading; unsigned counts need no validation scan
            counts = np.memmap(data_path, dtype=dtype, mode="r", shape=shape)
        else:
            counts = np.fromfile(data_path, dtype=dtype).reshape(shape)
    except OSError as exc:
        raise IoFailure(f"cannot read {data_path}: {exc}") from exc
    return Hypercube(width, height, spectral_bins, time_bins,
                     wl_start, wl_step, time_bin, counts)


def save_hypercube_manifest(cube: Hypercube, manifest_path: str,
                            data_file: str | None = None) -> None:
    """Write a hypercube as manifest + raw blob next to it."""
    if data_file is None:
        data_file = os.path.splitext(os.path.basename(manifest_path))[0] + ".raw"
    data_path = os.path.join(os.path.dirname(manifest_path) or ".", data_file)
    dtype_name = "f32" if np.issubdtype(cube.counts.dtype, np.floating) else "u16"
    arr = np.ascontiguousarray(cube.counts, dtype=_DTYPES[dtype_name])
    try:
        arr.tofile(data_path)
        man = {
            "width": cube.width,
            "height": cube.height,
            "spectral_bins": cube.spectral_bins,
            "time_bins": cube.time_bins,
            "wavelength_start_nm": cube.wavelength_start_nm,
            "wavelength_step_nm": cube.wavelength_step_nm,
            "time_bin_ps": cube.time_bin_ps,
            "dtype": dtype_name,
            "layout": "row-major x,y,s,t",
            "data_file": data_file,
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(man, fh, indent=2)
    except OSError as exc:
        raise IoFailure(f"cannot write hypercube: {exc}") from exc


def plane_to_bytes(plane: ScalarPlane) -> bytes:
    """Serialise: magic, dims, kind, wavelength, raw LE float32."""
    has_wl = plane.wavelength_nm is not None
    header = struct.pack(
        "<8sIIBB2xf",
        PLANE_MAGIC,
        plane.width,
        plane.height,
        _KIND_CODES[plane.kind],
        1 if has_wl else 0,
        float(plane.wavelength_nm) if has_wl else 0.0,
    )
    return header + np.ascontiguousarray(plane.values, dtype="<f4").tobytes()


def plane_from_bytes(blob: bytes, source: str = "<bytes>") -> ScalarPlane:
    if len(blob) < 24:
        raise CorruptHeader(f"truncated plane header in {source}")
    magic, width, height, kind_code, has_wl, wl = struct.unpack(
        "<8sIIBB2xf", blob[:24])
    if magic != PLANE_MAGIC:
        raise CorruptHeader(f"bad magic in {source}")
    if kind_code not in _KIND_NAMES:
        raise CorruptHeader(f"unknown plane kind code {kind_code}")
    data = blob[24:24 + width * height * 4]
    if len(data) != width * height * 4:
        raise CorruptHeader(f"truncated plane data in {source}")
    values = np.frombuffer(data, dtype="<f4").reshape(height, width)
    return ScalarPlane(_KIND_NAMES[kind_code], values,
                       wavelength_nm=wl if has_wl else None)


def save_plane(plane: ScalarPlane, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(plane_to_bytes(plane))
    except OSError as exc:
        raise IoFailure(f"cannot write plane {path}: {exc}") from exc


def load_plane(path: str | os.PathLike) -> ScalarPlane:
    if not os.path.isfile(path):
        raise MissingFile(f"plane not found: {path}")
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read plane {path}: {exc}") from exc
    return plane_from_bytes(blob, source=os.fspath(path))


def save_rgb(img: RgbImage, path: str | os.PathLike) -> None:
    try:
        Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write image {path}: {exc}") from exc


def load_rgb(path: str | os.PathLike) -> RgbImage:
    if not os.path.isfile(path):
        raise MissingFile(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            return RgbImage(np.asarray(im.convert("RGB")))
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc
