"""Per-label random convolution augmentation.

Each label region of an image gets its own randomly initialized 4-layer
convolutional network (channel plan 1->2->2->2->1, kernel size 1 or 3 per
layer, leaky rectifier slope 0.1 after every layer, no bias). The
per-network outputs are merged either with hard binary masks or with
Gaussian-smoothed blend maps that form a partition of unity, then mixed
back into the input image and rescaled to its Frobenius norm.

Convolutions follow the deep-learning convention (cross-correlation) with
same-size zero padding. Weight arrays can be injected directly for
deterministic testing; :func:`sample_randconv` draws them from the
standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DataError, DegenerateInputError
from .geometry import (
    build_displacement_field,
    intensity_jitter,
    sample_geom_params,
    sample_jitter_params,
    warp_labels,
    warp_volume,
)
from .volume import LabelMap, Volume

CHANNEL_PLAN = ((1, 2), (2, 2), (2, 2), (2, 1))
KERNEL_CHOICES = (1, 3)
LEAKY_SLOPE = 0.1


@dataclass(frozen=True, eq=False)
class RandConvNet:
    """Weights of the 4-layer augmentation network.

    ``weights[i]`` has shape ``(out_ch, in_ch, k, k, k)`` with ``k`` in
    {1, 3}; constructing with explicit arrays is the injection hook used
    by the tests.
    """

    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(CHANNEL_PLAN):
            raise DataError(f"expected {len(CHANNEL_PLAN)} layers, got {len(self.weights)}")
        converted = []
        for i, ((cin, cout), w) in enumerate(zip(CHANNEL_PLAN, self.weights)):
            arr = np.asarray(w, dtype=np.float64)
            if arr.ndim != 5 or arr.shape[:2] != (cout, cin):
                raise DataError(
                    f"layer {i} weights must have shape ({cout}, {cin}, k, k, k), got {arr.shape}"
                )
            k = arr.shape[2]
            if arr.shape[2:] != (k, k, k) or k not in KERNEL_CHOICES:
                raise DataError(f"layer {i} kernel must be cubic with size in {KERNEL_CHOICES}")
            if not np.isfinite(arr).all():
                raise DataError(f"layer {i} weights contain non-finite values")
            converted.append(arr)
        object.__setattr__(self, "weights", tuple(converted))

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[2] for w in self.weights)


def sample_randconv(rng: np.random.Generator) -> RandConvNet:
    """Draw a fresh network: per layer, kernel size first, then weights."""
    weights = []
    for cin, cout in CHANNEL_PLAN:
        k = KERNEL_CHOICES[rng.integers(0, len(KERNEL_CHOICES))]
        weights.append(rng.standard_normal((cout, cin, k, k, k)))
    return RandConvNet(tuple(weights))


def _conv_layer(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x: (cin, nx, ny, nz); w: (cout, cin, k, k, k). Same-size output,
    # zero padding, accumulated tap by tap.
    k = w.shape[2]
    r = k // 2
    nx, ny, nz = x.shape[1:]
    if r:
        x = np.pad(x, ((0, 0), (r, r), (r, r), (r, r)))
    out = np.zeros((w.shape[0], nx, ny, nz), dtype=np.float64)
    for dx in range(k):
        for dy in range(k):
            for dz in range(k):
                window = x[:, dx : dx + nx, dy : dy + ny, dz : dz + nz]
                out += np.tensordot(w[:, :, dx, dy, dz], window, axes=([1], [0]))
    return out


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, LEAKY_SLOPE * x)


def _run_net(net: RandConvNet, data: np.ndarray) -> np.ndarray:
    x = data[np.newaxis].astype(np.float64)
    for w in net.weights:
        x = _leaky(_conv_layer(x, w))
    return x[0]


def apply_randconv(net: RandConvNet, vol: Volume) -> Volume:
    """Run the 4-layer network over the whole volume."""
    if any(n < 3 for n in vol.dims):
        raise DataError(f"volume dims must be >= 3 per axis, got {vol.dims}")
    return Volume(_run_net(net, vol.data), vol.spacing)


# ---------------------------------------------------------------------------
# Blend maps

@dataclass(frozen=True, eq=False)
class GaussianKernelSpec:
    """Discretized 3D Gaussian, normalized to sum 1 (sigma/size in voxels)."""

    sigma: float = 1.0
    size: int = 5

    def __post_init__(self):
        if self.sigma <= 0 or not np.isfinite(self.sigma):
            raise DataError(f"sigma must be positive, got {self.sigma}")
        if self.size < 1 or self.size % 2 == 0:
            raise DataError(f"kernel size must be odd and positive, got {self.size}")

    @property
    def weights_1d(self) -> np.ndarray:
        r = self.size // 2
        d = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-0.5 * (d / self.sigma) ** 2)
        return w / w.sum()

    @property
    def weights(self) -> np.ndarray:
        k1 = self.weights_1d
        w3 = k1[:, None, None] * k1[None, :, None] * k1[None, None, :]
        return w3 / w3.sum()


@dataclass(frozen=True, eq=False)
class BlendMaps:
    """Per-label weight fields forming a partition of unity.

    ``maps[i]`` is the field for ``labels[i]``; every voxel's weights sum
    to 1 within 1e-5 and each weight lies in [0, 1].
    """

    labels: tuple[int, ...]
    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        labels = tuple(int(c) for c in self.labels)
        if maps.ndim != 4 or maps.shape[0] != len(labels):
            raise DataError(
                f"maps must have shape (n_labels, nx, ny, nz) with n_labels={len(labels)}, "
                f"got {maps.shape}"
            )
        if len(set(labels)) != len(labels):
            raise DataError(f"duplicate labels in {labels}")
        if maps.size and ((maps < 0).any() or (maps > 1).any()):
            raise DataError("blend map weights must lie in [0, 1]")
        total = maps.sum(axis=0)
        if maps.size and np.abs(total - 1.0).max() > 1e-5:
            raise DataError("blend maps do not form a partition of unity")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "maps", maps)


def _blur_axis(arr: np.ndarray, k1: np.ndarray, axis: int) -> np.ndarray:
    r = len(k1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad)
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    index = [slice(None)] * arr.ndim
    for i, w in enumerate(k1):
        index[axis] = slice(i, i + n)
        out += w * padded[tuple(index)]
    return out


def smooth_masks(labels: LabelMap, kernel: GaussianKernelSpec | None = None) -> BlendMaps:
    """Gaussian-smooth each label's binary mask into a blend map.

    Zero padding leaks weight out of the volume at its borders, so the
    smoothed masks are renormalized voxelwise by their sum; the partition
    of unity then holds everywhere, borders included.
    """
    kernel = kernel or GaussianKernelSpec()
    k1 = kernel.weights_1d
    blurred = []
    for c in labels.label_set:
        mask = (labels.labels == c).astype(np.float64)
        for axis in range(3):
            mask = _blur_axis(mask, k1, axis)
        blurred.append(mask)
    stack = np.stack(blurred, axis=0)
    total = stack.sum(axis=0)
    return BlendMaps(labels.label_set, stack / total)


# ---------------------------------------------------------------------------
# Region-wise augmentation and recombination

def _check_nets(label_set, nets: Mapping[int, RandConvNet]) -> None:
    missing = [c for c in label_set if c not in nets]
    if missing:
        raise DataError(f"no augmentation network for labels {missing}")


def src_binary(vol: Volume, labels: LabelMap, nets: Mapping[int, RandConvNet]) -> Volume:
    """Augment each label region with its own network, hard-masked."""
    if vol.dims != labels.dims:
        raise DataError(f"volume dims {vol.dims} do not match label dims {labels.dims}")
    _check_nets(labels.label_set, nets)
    acc = np.zeros(vol.dims, dtype=np.float64)
    for c in labels.label_set:
        mask = (labels.labels == c).astype(np.float64)
        acc += mask * _run_net(nets[c], vol.data)
    return Volume(acc, vol.spacing)


def src_blend(vol: Volume, maps: BlendMaps, nets: Mapping[int, RandConvNet]) -> Volume:
    """Augment each label region with its own network, merged by blend maps."""
    if maps.maps.shape[1:] != vol.dims:
        raise DataError(f"blend map dims {maps.maps.shape[1:]} do not match volume dims {vol.dims}")
    if tuple(sorted(maps.labels)) != tuple(sorted(nets.keys())):
        raise DataError(
            f"blend map labels {sorted(maps.labels)} do not match net labels {sorted(nets.keys())}"
        )
    acc = np.zeros(vol.dims, dtype=np.float64)
    for i, c in enumerate(maps.labels):
        acc += maps.maps[i] * _run_net(nets[c], vol.data)
    return Volume(acc, vol.spacing)


def mix_with_original(aug: Volume, orig: Volume, alpha: float) -> Volume:
    """Linear interpolation ``alpha * aug + (1 - alpha) * orig``."""
    if aug.dims != orig.dims:
        raise DataError(f"dims mismatch: {aug.dims} vs {orig.dims}")
    if not (0.0 <= alpha <= 1.0):
        raise DataError(f"alpha must lie in [0, 1], got {alpha}")
    out = alpha * aug.data.astype(np.float64) + (1.0 - alpha) * orig.data.astype(np.float64)
    return Volume(out, aug.spacing)


def renormalize_frobenius(x: Volume, ref: Volume) -> Volume:
    """Rescale ``x`` so its Frobenius norm equals that of ``ref``."""
    nx = float(np.linalg.norm(x.data.astype(np.float64).ravel()))
    nref = float(np.linalg.norm(ref.data.astype(np.float64).ravel()))
    if nx == 0.0:
        if nref == 0.0:
            return x
        raise DegenerateInputError("cannot renormalize an all-zero volume to a nonzero norm")
    return Volume(x.data.astype(np.float64) * (nref / nx), x.spacing)


@dataclass(frozen=True, eq=False)
class SrcSample:
    """One fully drawn region-wise augmentation: the (image, labels) pair it
    applies to, the mixing alpha, and one network per label."""

    image: Volume
    labels: LabelMap
    alpha: float
    nets: Mapping[int, RandConvNet]

    def __post_init__(self):
        if self.image.dims != self.labels.dims:
            raise DataError(
                f"image dims {self.image.dims} do not match label dims {self.labels.dims}"
            )
        if not (0.0 <= self.alpha <= 1.0):
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        _check_nets(self.labels.label_set, self.nets)


def apply_src_sample(sample: SrcSample, kernel: GaussianKernelSpec | None = None) -> Volume:
    """Realize a drawn sample: blend the per-label networks, mix with the
    input image, and restore the input's Frobenius norm."""
    maps = smooth_masks(sample.labels, kernel)
    nets = {c: sample.nets[c] for c in sample.labels.label_set}
    augmented = src_blend(sample.image, maps, nets)
    mixed = mix_with_original(augmented, sample.image, sample.alpha)
    return renormalize_frobenius(mixed, sample.image)


# ---------------------------------------------------------------------------
# Composed training-time augmentation

@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for :func:`augment_sample`; defaults are the standard recipe.

    ``modality`` selects the jitter scaling range ("ct" or "mr").
    """

    modality: str = "ct"
    geometry_enabled: bool = True
    translation_vox: float = 20.0
    rotation_rad: float = 0.35
    scale_range: tuple[float, float] = (0.8, 1.2)
    elastic_vox: float = 15.0
    jitter_enabled: bool = True
    jitter_shift: float = 0.2
    jitter_scale_ct: tuple[float, float] = (0.8, 1.2)
    jitter_scale_mr: tuple[float, float] = (0.6, 1.4)
    src_enabled: bool = True
    src_alpha_mode: str = "uniform"
    src_alpha: float = 1.0
    blend_sigma_vox: float = 1.0
    blend_kernel_size: int = 5

    def __post_init__(self):
        if self.modality not in ("ct", "mr"):
            raise DataError(f"modality must be 'ct' or 'mr', got {self.modality!r}")
        if self.src_alpha_mode not in ("uniform", "fixed"):
            raise DataError(f"alpha mode must be 'uniform' or 'fixed', got {self.src_alpha_mode!r}")
        if not (0.0 <= self.src_alpha <= 1.0):
            raise DataError(f"fixed alpha must lie in [0, 1], got {self.src_alpha}")
        for name in ("translation_vox", "rotation_rad", "elastic_vox", "jitter_shift"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        for name in ("scale_range", "jitter_scale_ct", "jitter_scale_mr"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise DataError(f"{name} must be an ordered finite pair")

    @property
    def jitter_scale_range(self) -> tuple[float, float]:
        return self.jitter_scale_ct if self.modality == "ct" else self.jitter_scale_mr


def augment_sample(
    image: Volume,
    labels: LabelMap,
    rng: np.random.Generator,
    config: AugmentConfig | None = None,
) -> tuple[Volume, LabelMap]:
    """Full augmentation pipeline for one (image, labels) pair.

    Stages, in order: geometric warp of both image and labels, global
    intensity jitter, per-label random convolution blended via smoothed
    masks, alpha mixing with the jittered image, and Frobenius
    renormalization against that same image (the stage's input). Labels
    only pass through the geometry.

    The rng is consumed in a fixed, documented order so seeded runs are
    reproducible: geometry params (translation, rotation, scale, elastic),
    jitter (shift, scale), one network per label in ``label_set`` order
    (per layer: kernel size, then weights), and finally the mixing alpha.
    Disabled stages consume no draws.
    """
    config = config or AugmentConfig()
    if image.dims != labels.dims:
        raise DataError(f"image dims {image.dims} do not match label dims {labels.dims}")

    img, lab = image, labels
    if config.geometry_enabled:
        params = sample_geom_params(
            rng,
            translation_vox=config.translation_vox,
            rotation_rad=config.rotation_rad,
            scale_range=config.scale_range,
            elastic_vox=config.elastic_vox,
        )
        dfield = build_displacement_field(params, image.dims, image.spacing)
        img = warp_volume(img, dfield)
        lab = warp_labels(lab, dfield)
    if config.jitter_enabled:
        jitter = sample_jitter_params(
            rng, shift=config.jitter_shift, scale_range=config.jitter_scale_range
        )
        img = intensity_jitter(img, jitter)

    if not config.src_enabled:
        return img, lab

    nets = {c: sample_randconv(rng) for c in lab.label_set}
    if config.src_alpha_mode == "uniform":
        alpha = float(rng.uniform(0.0, 1.0))
    else:
        alpha = config.src_alpha
    sample = SrcSample(image=img, labels=lab, alpha=alpha, nets=nets)
    kernel = GaussianKernelSpec(sigma=config.blend_sigma_vox, size=config.blend_kernel_size)
    return apply_src_sample(sample, kernel), lab
