"""Geometric augmentation: random affine + elastic displacement fields,
backward warping of images/labels, and global intensity jitter.

The displacement field is defined as ``d(p) = A(p) - p`` where ``A``
composes per-axis scaling, per-axis rotations (applied in x, y, z order,
in physical space), and translation about the volume center, plus an
8x8x8 elastic node grid upsampled trilinearly. Warping is backward
(pull): ``out[p] = vol[p + d(p)]``, so content moves by the inverse of
``A``; out-of-bounds samples read 0 (background for labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .volume import LabelMap, Volume, sample_nearest, sample_trilinear

ELASTIC_NODES = 8


@dataclass(frozen=True, eq=False)
class GeomParams:
    """One draw of the geometric augmentation parameters.

    translation/elastic are in voxels, rotation in radians, scale is a
    per-axis factor. Range discipline is the sampler's job.
    """

    translation: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    elastic_grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))
        object.__setattr__(self, "rotation", _vec3(self.rotation, "rotation"))
        object.__setattr__(self, "scale", _vec3(self.scale, "scale"))
        grid = np.asarray(self.elastic_grid, dtype=np.float64)
        expected = (ELASTIC_NODES, ELASTIC_NODES, ELASTIC_NODES, 3)
        if grid.shape != expected:
            raise DataError(f"elastic_grid must have shape {expected}, got {grid.shape}")
        if not np.isfinite(grid).all():
            raise DataError("elastic_grid contains non-finite values")
        object.__setattr__(self, "elastic_grid", grid)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel displacement vectors in voxel units, shape (nx, ny, nz, 3)."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 4 or vec.shape[-1] != 3:
            raise DataError(f"displacement field must have shape (nx, ny, nz, 3), got {vec.shape}")
        if not np.isfinite(vec).all():
            raise DataError("displacement field contains non-finite values")
        object.__setattr__(self, "vectors", vec)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.vectors.shape[:3]


@dataclass(frozen=True)
class IntensityJitterParams:
    """Global affine intensity perturbation: ``v -> v * scale + shift``."""

    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.shift) and np.isfinite(self.scale)):
            raise DataError("jitter parameters must be finite")


def _vec3(value, name) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.shape != (3,):
        raise DataError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise DataError(f"{name} contains non-finite values")
    return v


def sample_geom_params(
    rng: np.random.Generator,
    *,
    translation_vox: float = 20.0,
    rotation_rad: float = 0.35,
    scale_range: tuple[float, float] = (0.8, 1.2),
    elastic_vox: float = 15.0,
) -> GeomParams:
    """Draw geometric parameters uniformly from their ranges.

    Draw order is fixed (translation, rotation, scale, elastic grid) so
    that a seeded generator reproduces the same parameters.
    """
    translation = rng.uniform(-translation_vox, translation_vox, size=3)
    rotation = rng.uniform(-rotation_rad, rotation_rad, size=3)
    scale = rng.uniform(scale_range[0], scale_range[1], size=3)
    elastic = rng.uniform(
        -elastic_vox, elastic_vox, size=(ELASTIC_NODES, ELASTIC_NODES, ELASTIC_NODES, 3)
    )
    return GeomParams(translation, rotation, scale, elastic)


def sample_jitter_params(
    rng: np.random.Generator,
    *,
    shift: float = 0.2,
    scale_range: tuple[float, float] = (0.8, 1.2),
) -> IntensityJitterParams:
    """Draw jitter parameters: shift first, then scale."""
    s = rng.uniform(-shift, shift)
    f = rng.uniform(scale_range[0], scale_range[1])
    return IntensityJitterParams(shift=float(s), scale=float(f))


def _rotation_matrix(angles: np.ndarray) -> np.ndarray:
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def build_displacement_field(params: GeomParams, dims, spacing) -> DisplacementField:
    """Realize the affine + elastic transform as a dense displacement field.

    The affine displacement is computed as ``((M - I) @ q) / spacing + t``
    with ``q`` the physical offset from the volume center and
    ``M = R @ diag(scale)``; zero parameters therefore yield an exactly
    zero field. Elastic node displacements are upsampled trilinearly from
    the 8x8x8 grid spanning the volume.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or any(n < ELASTIC_NODES for n in dims):
        raise DataError(f"dims must be >= {ELASTIC_NODES} per axis, got {dims}")
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (3,) or (spacing <= 0).any():
        raise DataError(f"spacing must be 3 positive reals, got {spacing}")

    axes = [np.arange(n, dtype=np.float64) for n in dims]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0

    M = _rotation_matrix(params.rotation) @ np.diag(params.scale)
    q = (P - center) * spacing
    affine = q @ (M - np.eye(3)).T / spacing + params.translation

    node_step = [7.0 / (n - 1) for n in dims]
    gx = P[..., 0] * node_step[0]
    gy = P[..., 1] * node_step[1]
    gz = P[..., 2] * node_step[2]
    elastic = np.stack(
        [sample_trilinear(params.elastic_grid[..., c], gx, gy, gz) for c in range(3)],
        axis=-1,
    )
    return DisplacementField(affine + elastic)


def _warp_coords(dims, field: DisplacementField):
    if tuple(dims) != field.dims:
        raise DataError(f"field dims {field.dims} do not match volume dims {tuple(dims)}")
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    v = field.vectors
    return X + v[..., 0], Y + v[..., 1], Z + v[..., 2]


def warp_volume(vol: Volume, field: DisplacementField) -> Volume:
    """Backward-warp ``vol`` with trilinear sampling; outside reads 0."""
    x, y, z = _warp_coords(vol.dims, field)
    return Volume(sample_trilinear(vol.data, x, y, z), vol.spacing)


def warp_labels(labels: LabelMap, field: DisplacementField) -> LabelMap:
    """Backward-warp ``labels`` with nearest-neighbor sampling; outside reads background."""
    x, y, z = _warp_coords(labels.dims, field)
    return LabelMap(sample_nearest(labels.labels, x, y, z, fill=0), labels.spacing)


def intensity_jitter(vol: Volume, params: IntensityJitterParams) -> Volume:
    """Apply the global affine intensity map; no clipping afterwards."""
    out = vol.data.astype(np.float64) * params.scale + params.shift
    return Volume(out, vol.spacing)
