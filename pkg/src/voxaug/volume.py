"""Dense 3D scalar volumes and label maps: containers, SVOL file I/O,
modality normalization, clipping, resampling, and synthetic phantoms.

Conventions used throughout the package:

* A grid has shape ``(nx, ny, nz)`` and is indexed ``data[x, y, z]``.
  Serialized payloads are x-fastest, i.e. linear index
  ``i = x + nx * (y + ny * z)``.
* Voxel ``(x, y, z)`` sits at physical position ``(x*sx, y*sy, z*sz)`` mm,
  so a volume's own frame has its origin at voxel ``(0, 0, 0)``.
* Image data carries float32 semantics. Intermediate arithmetic runs in
  float64 and is cast back on construction.
* Percentiles are linear-interpolation percentiles (numpy's default).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateInputError

_HEADER_SUFFIX = ".svol.json"
_PAYLOAD_SUFFIX = ".svol.bin"


class Volume:
    """A 3D scalar image with physical voxel spacing (mm/voxel).

    The data array is held as a read-only float32 view; all operations in
    this package return new volumes and never mutate their inputs.
    """

    __slots__ = ("data", "spacing")

    def __init__(self, data, spacing):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 3 or arr.size == 0:
            raise DataError(f"volume data must be a non-empty 3D grid, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("volume data contains non-finite values")
        self.data = arr.view()
        self.data.flags.writeable = False
        self.spacing = _check_spacing(spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def center_mm(self) -> tuple[float, float, float]:
        """Physical position of the grid's central point."""
        return tuple((n - 1) / 2.0 * s for n, s in zip(self.dims, self.spacing))


class LabelMap:
    """A 3D map of non-negative integer labels, paired with a Volume's grid.

    ``label_set`` lists the distinct labels present, with background 0
    always included.
    """

    __slots__ = ("labels", "spacing", "label_set")

    def __init__(self, labels, spacing):
        arr = np.asarray(labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise DataError(f"labels must be integers, got dtype {arr.dtype}")
        if arr.ndim != 3 or arr.size == 0:
            raise DataError(f"label data must be a non-empty 3D grid, got shape {arr.shape}")
        if arr.min() < 0:
            raise DataError("labels must be non-negative")
        self.labels = arr.view()
        self.labels.flags.writeable = False
        self.spacing = _check_spacing(spacing)
        present = [int(v) for v in np.unique(arr)]
        if not present or present[0] != 0:
            present.insert(0, 0)
        self.label_set = tuple(present)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a deterministic synthetic (image, labels) pair.

    ``intensity_table`` holds one ``(mean, noise_std)`` entry per label,
    background included.
    """

    seed: int
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_labels: int = 2
    shape_mode: str = "nested-ellipsoids"
    intensity_table: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 0.0))

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise DataError("seed must fit an unsigned 64-bit integer")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise DataError(f"dims must be 3 positive integers, got {self.dims}")
        _check_spacing(self.spacing)
        if not (2 <= self.n_labels <= 16):
            raise DataError("n_labels must be between 2 and 16 (background included)")
        if self.shape_mode not in ("nested-ellipsoids", "blobs"):
            raise DataError(f"unknown shape_mode {self.shape_mode!r}")
        if len(self.intensity_table) != self.n_labels:
            raise DataError("intensity_table must have exactly n_labels entries")
        for entry in self.intensity_table:
            mean, std = entry
            if not (math.isfinite(mean) and math.isfinite(std) and std >= 0):
                raise DataError(f"bad intensity_table entry {entry}")


def _check_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or any(not math.isfinite(s) or s <= 0 for s in sp):
        raise DataError(f"spacing must be 3 positive reals, got {spacing}")
    return sp


# ---------------------------------------------------------------------------
# SVOL file I/O
#
# `<name>.svol.json` header + `<name>.svol.bin` raw little-endian payload in
# x-fastest order. Round-trips are bit-exact.

def _svol_paths(path) -> tuple[Path, Path]:
    p = str(path)
    if p.endswith(_HEADER_SUFFIX):
        p = p[: -len(_HEADER_SUFFIX)]
    return Path(p + _HEADER_SUFFIX), Path(p + _PAYLOAD_SUFFIX)


def _write_svol(path, arr, np_dtype, header_dtype, spacing) -> None:
    header_path, payload_path = _svol_paths(path)
    payload = arr.ravel(order="F").astype(np_dtype, copy=False).tobytes()
    header = {
        "dims": [int(n) for n in arr.shape],
        "spacing_mm": [float(s) for s in spacing],
        "dtype": header_dtype,
        "byte_order": "le",
        "data": payload_path.name,
    }
    payload_path.write_bytes(payload)
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")


def _read_svol(path, expected_dtype):
    header_path, _ = _svol_paths(path)
    if not header_path.exists():
        raise DataError(f"missing SVOL header: {header_path}")
    try:
        with open(header_path) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed SVOL header {header_path}: {exc}") from exc
    for key in ("dims", "spacing_mm", "dtype", "byte_order", "data"):
        if key not in header:
            raise DataError(f"SVOL header {header_path} missing field {key!r}")
    if header["dtype"] != expected_dtype:
        raise DataError(
            f"unsupported dtype {header['dtype']!r} in {header_path} (expected {expected_dtype!r})"
        )
    if header["byte_order"] != "le":
        raise DataError(f"unsupported byte order {header['byte_order']!r} in {header_path}")
    dims = tuple(int(n) for n in header["dims"])
    if len(dims) != 3 or any(n < 1 for n in dims):
        raise DataError(f"bad dims {header['dims']} in {header_path}")
    payload_path = header_path.parent / header["data"]
    if not payload_path.exists():
        raise DataError(f"missing SVOL payload: {payload_path}")
    raw = payload_path.read_bytes()
    np_dtype = np.dtype("<f4") if expected_dtype == "f32" else np.dtype("<u2")
    expected_bytes = np_dtype.itemsize * dims[0] * dims[1] * dims[2]
    if len(raw) != expected_bytes:
        raise DataError(
            f"payload size mismatch for {payload_path}: got {len(raw)} bytes, "
            f"expected {expected_bytes}"
        )
    arr = np.frombuffer(raw, dtype=np_dtype).reshape(dims, order="F")
    return arr, tuple(float(s) for s in header["spacing_mm"])


def save_volume(vol: Volume, path) -> None:
    """Write ``vol`` as an SVOL pair (f32 payload)."""
    _write_svol(path, vol.data, "<f4", "f32", vol.spacing)


def load_volume(path) -> Volume:
    """Read an SVOL volume written by :func:`save_volume`."""
    arr, spacing = _read_svol(path, "f32")
    if not np.isfinite(arr).all():
        raise DataError(f"SVOL payload at {path} contains non-finite values")
    return Volume(arr, spacing)


def save_labels(labels: LabelMap, path) -> None:
    """Write ``labels`` as an SVOL pair (u16 payload)."""
    if labels.labels.max() > np.iinfo(np.uint16).max:
        raise DataError("label values exceed the 16-bit payload range")
    _write_svol(path, labels.labels, "<u2", "u16", labels.spacing)


def load_labels(path) -> LabelMap:
    """Read an SVOL label map written by :func:`save_labels`."""
    arr, spacing = _read_svol(path, "u16")
    return LabelMap(arr, spacing)


# ---------------------------------------------------------------------------
# Modality normalization and pre-clipping

def normalize_ct(vol: Volume) -> Volume:
    """Hounsfield units -> [-1, 1]: divide by 2048 and clamp."""
    out = np.clip(vol.data.astype(np.float64) / 2048.0, -1.0, 1.0)
    return Volume(out, vol.spacing)


def normalize_mr(vol: Volume) -> Volume:
    """Map the 10th percentile to -1 and the 90th to +1, linearly.

    Values beyond the percentiles are not clipped; downstream intensity
    jitter moves values outside [-1, 1] anyway.
    """
    data = vol.data.astype(np.float64)
    p10, p90 = np.percentile(data, [10.0, 90.0])
    if p90 <= p10:
        raise DegenerateInputError(
            f"degenerate intensity distribution: p10 == p90 == {p10}"
        )
    out = (data - p10) / (p90 - p10) * 2.0 - 1.0
    return Volume(out, vol.spacing)


def preclip_ct(vol: Volume) -> Volume:
    """Clamp Hounsfield units to [-1023, 1024] ahead of histogram work."""
    return Volume(np.clip(vol.data.astype(np.float64), -1023.0, 1024.0), vol.spacing)


def preclip_mr(vol: Volume) -> Volume:
    """Rescale so the minimum maps to 0 and the 90th percentile to 2047,
    then clamp to [0, 2047].

    The shift by the minimum makes the operation total for inputs with
    negative values.
    """
    data = vol.data.astype(np.float64)
    shifted = data - data.min()
    p90 = np.percentile(shifted, 90.0)
    if p90 <= 0:
        raise DegenerateInputError("degenerate intensity distribution: min == p90")
    out = np.clip(shifted / p90 * 2047.0, 0.0, 2047.0)
    return Volume(out, vol.spacing)


# ---------------------------------------------------------------------------
# Grid sampling and resampling

def sample_trilinear(data: np.ndarray, x, y, z) -> np.ndarray:
    """Trilinear sampling of ``data`` at fractional voxel coordinates.

    Samples outside the grid contribute 0 (corner weights falling outside
    are multiplied into a zero value), so results fade to 0 at the border.
    Returns float64.
    """
    nx, ny, nz = data.shape
    x0 = np.floor(x)
    y0 = np.floor(y)
    z0 = np.floor(z)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    xi = x0.astype(np.int64)
    yi = y0.astype(np.int64)
    zi = z0.astype(np.int64)
    acc = np.zeros(np.shape(x), dtype=np.float64)
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        cx = xi + dx
        okx = (cx >= 0) & (cx < nx)
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            cy = yi + dy
            oky = okx & (cy >= 0) & (cy < ny)
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                cz = zi + dz
                ok = oky & (cz >= 0) & (cz < nz)
                vals = data[
                    np.clip(cx, 0, nx - 1),
                    np.clip(cy, 0, ny - 1),
                    np.clip(cz, 0, nz - 1),
                ]
                acc += (wx * wy * wz) * np.where(ok, vals, 0.0)
    return acc


def sample_nearest(data: np.ndarray, x, y, z, fill=0):
    """Nearest-neighbor sampling at fractional voxel coordinates.

    Halfway coordinates round up; samples outside the grid take ``fill``.
    """
    nx, ny, nz = data.shape
    xi = np.floor(np.asarray(x) + 0.5).astype(np.int64)
    yi = np.floor(np.asarray(y) + 0.5).astype(np.int64)
    zi = np.floor(np.asarray(z) + 0.5).astype(np.int64)
    ok = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny) & (zi >= 0) & (zi < nz)
    vals = data[
        np.clip(xi, 0, nx - 1),
        np.clip(yi, 0, ny - 1),
        np.clip(zi, 0, nz - 1),
    ]
    return np.where(ok, vals, np.asarray(fill, dtype=data.dtype))


def _target_grid_coords(src_dims, src_spacing, target_dims, target_spacing, center_mm):
    # Source-voxel coordinates of every target grid node. The spacing ratio
    # is formed first so an identical grid yields exact integer coordinates.
    tdims = tuple(int(n) for n in target_dims)
    if len(tdims) != 3 or any(n < 1 for n in tdims):
        raise DataError(f"target dims must be 3 positive integers, got {target_dims}")
    tsp = _check_spacing(target_spacing)
    ctr = tuple(float(c) for c in center_mm)
    if len(ctr) != 3:
        raise DataError(f"center must be a 3-vector, got {center_mm}")
    coords = []
    for axis in range(3):
        ratio = tsp[axis] / src_spacing[axis]
        tgt_center = (tdims[axis] - 1) / 2.0 * tsp[axis]
        offset = (ctr[axis] - tgt_center) / src_spacing[axis]
        coords.append(np.arange(tdims[axis], dtype=np.float64) * ratio + offset)
    return np.meshgrid(*coords, indexing="ij")


def resample_to_grid(vol: Volume, target_dims, target_spacing, center_mm) -> Volume:
    """Trilinear resampling of ``vol`` onto a new grid.

    The target grid is positioned so that its central point lands on
    ``center_mm`` in the source volume's physical frame. Out-of-bounds
    samples take the value 0.
    """
    X, Y, Z = _target_grid_coords(vol.dims, vol.spacing, target_dims, target_spacing, center_mm)
    return Volume(sample_trilinear(vol.data, X, Y, Z), target_spacing)


def resample_labels_to_grid(labels: LabelMap, target_dims, target_spacing, center_mm) -> LabelMap:
    """Nearest-neighbor counterpart of :func:`resample_to_grid`; outside -> background."""
    X, Y, Z = _target_grid_coords(
        labels.dims, labels.spacing, target_dims, target_spacing, center_mm
    )
    return LabelMap(sample_nearest(labels.labels, X, Y, Z, fill=0), target_spacing)


# ---------------------------------------------------------------------------
# Synthetic phantoms

def make_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMap]:
    """Build a deterministic synthetic (image, labels) pair from ``spec``.

    Every label (background included) must end up covering at least 1% of
    the voxels, otherwise ``spec`` is rejected as unsatisfiable.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.shape_mode == "nested-ellipsoids":
        labels = _nested_ellipsoid_labels(spec)
    else:
        labels = _blob_labels(spec, rng)

    counts = np.bincount(labels.ravel(), minlength=spec.n_labels)
    min_voxels = 0.01 * labels.size
    lacking = [k for k in range(spec.n_labels) if counts[k] < min_voxels]
    if lacking:
        raise DataError(
            f"unsatisfiable phantom spec: labels {lacking} cover less than 1% of voxels"
        )

    means = np.array([m for m, _ in spec.intensity_table], dtype=np.float64)
    stds = np.array([s for _, s in spec.intensity_table], dtype=np.float64)
    image = means[labels] + stds[labels] * rng.standard_normal(labels.shape)
    return Volume(image, spec.spacing), LabelMap(labels, spec.spacing)


def _voxel_grid(dims):
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def _nested_ellipsoid_labels(spec: PhantomSpec) -> np.ndarray:
    dims = np.asarray(spec.dims, dtype=np.float64)
    center = (dims - 1.0) / 2.0
    semi = np.maximum(0.45 * (dims - 1.0), 1e-3)
    X, Y, Z = _voxel_grid(spec.dims)
    rho = np.sqrt(
        ((X - center[0]) / semi[0]) ** 2
        + ((Y - center[1]) / semi[1]) ** 2
        + ((Z - center[2]) / semi[2]) ** 2
    )
    n_fg = spec.n_labels - 1
    # Equal-volume nested shells: thresholds step down in cube-root space.
    thresholds = [((n_fg - j) / n_fg) ** (1.0 / 3.0) for j in range(n_fg + 1)]
    labels = np.zeros(spec.dims, dtype=np.int32)
    for k in range(1, n_fg + 1):
        shell = (rho <= thresholds[k - 1]) & (rho > thresholds[k])
        labels[shell] = k
    labels[rho <= thresholds[n_fg]] = n_fg
    return labels


def _blob_labels(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    dims = np.asarray(spec.dims, dtype=np.float64)
    X, Y, Z = _voxel_grid(spec.dims)
    min_voxels = 0.01 * int(np.prod(spec.dims))
    for _ in range(64):
        labels = np.zeros(spec.dims, dtype=np.int32)
        for k in range(1, spec.n_labels):
            center = rng.uniform(0.25, 0.75, size=3) * (dims - 1.0)
            semi = np.maximum(rng.uniform(0.15, 0.30, size=3) * dims, 1.0)
            mask = (
                ((X - center[0]) / semi[0]) ** 2
                + ((Y - center[1]) / semi[1]) ** 2
                + ((Z - center[2]) / semi[2]) ** 2
            ) <= 1.0
            labels[mask] = k
        counts = np.bincount(labels.ravel(), minlength=spec.n_labels)
        if (counts >= min_voxels).all():
            return labels
    raise DataError("unsatisfiable phantom spec: blob placement cannot reach 1% coverage")
