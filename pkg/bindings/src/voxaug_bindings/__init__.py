"""Thin array-in/array-out wrapper around the voxaug pipeline.

Exposes exactly four pipeline-level operations for training loops:
``py_augment``, ``py_fit_hist``, ``py_apply_sm``, and ``py_metrics``.
Inputs and outputs are plain contiguous numpy buffers wrapped in
:class:`ArrayHandle`; configs are plain dicts with the same field names
the CLI config file uses; histograms travel as the persisted JSON schema
(a dict). Every call is bit-for-bit equal to the core library / CLI for
the same seed and config, and no input buffer is copied or retained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from voxaug import (
    LabelMap,
    Volume,
    apply_sm,
    augment_sample,
    compute_image_cdf,
    evaluate_pair,
    histogram_from_dict,
    histogram_to_dict,
    report_to_dict,
)
from voxaug.cli import pipeline_config_from_dict, preclip_for_modality, rng_for_sample
from voxaug.histmatch import SMConfig, average_histograms

__all__ = ["ArrayHandle", "py_augment", "py_fit_hist", "py_apply_sm", "py_metrics"]

IMAGE_DTYPE = np.float32
LABEL_DTYPE = np.uint16


@dataclass(frozen=True, eq=False)
class ArrayHandle:
    """A caller-owned dense 3D buffer plus its voxel spacing.

    ``data`` is either a 3D array with axes (x, y, z), or a flat buffer
    in x-fastest order together with ``dims`` (it is then viewed, not
    copied). Element kind must be float32 (images) or uint16 (labels).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        arr = self.data
        if not isinstance(arr, np.ndarray):
            raise TypeError(f"expected a numpy array, got {type(arr).__name__}")
        if arr.dtype not in (IMAGE_DTYPE, LABEL_DTYPE):
            raise TypeError(f"element kind must be float32 or uint16, got {arr.dtype}")
        if arr.ndim == 1:
            if self.dims is None:
                raise TypeError("flat buffers need explicit dims")
            dims = tuple(int(n) for n in self.dims)
            if arr.size != dims[0] * dims[1] * dims[2]:
                raise TypeError(f"buffer length {arr.size} does not match dims {dims}")
            arr = arr.reshape(dims, order="F")  # x-fastest, zero copy
        elif arr.ndim != 3:
            raise TypeError(f"expected a 1D buffer or 3D array, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dims", arr.shape)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))


def _require_kind(handle: ArrayHandle, dtype, what: str) -> np.ndarray:
    if not isinstance(handle, ArrayHandle):
        raise TypeError(f"{what} must be an ArrayHandle, got {type(handle).__name__}")
    if handle.data.dtype != dtype:
        raise TypeError(f"{what} must have element kind {np.dtype(dtype).name}, "
                        f"got {handle.data.dtype}")
    return handle.data


def py_augment(image: ArrayHandle, labels: ArrayHandle, seed: int,
               config: dict | None = None, sample_index: int = 0):
    """Run the augmentation pipeline on one (image, labels) pair.

    Equivalent, bit for bit, to sample ``sample_index`` of the CLI
    ``augment`` command with the same seed and config dict.
    """
    img = _require_kind(image, IMAGE_DTYPE, "image")
    lab = _require_kind(labels, LABEL_DTYPE, "labels")
    cfg = pipeline_config_from_dict(config or {})
    out_img, out_lab = augment_sample(
        Volume(img, image.spacing),
        LabelMap(lab, labels.spacing),
        rng_for_sample(int(seed), int(sample_index)),
        cfg.augment,
    )
    return (
        ArrayHandle(out_img.data, out_img.spacing),
        ArrayHandle(out_lab.labels.astype(LABEL_DTYPE, copy=False), out_lab.spacing),
    )


def py_fit_hist(volumes: list[ArrayHandle], config: dict | None = None) -> dict:
    """Fit the reference histogram over pre-clipped volumes.

    Returns the histogram as its JSON-schema dict; equal to the CLI
    ``fit-hist`` output for the same volumes and config.
    """
    cfg = pipeline_config_from_dict(config or {})
    hists = []
    for handle in volumes:
        data = _require_kind(handle, IMAGE_DTYPE, "volume")
        vol = preclip_for_modality(Volume(data, handle.spacing), cfg.modality)
        hists.append(compute_image_cdf(vol, cfg.sm))
    return histogram_to_dict(average_histograms(hists))


def py_apply_sm(volume: ArrayHandle, histogram: dict) -> ArrayHandle:
    """Match a volume to a fitted histogram (dict as from :func:`py_fit_hist`).

    Pre-clips for the histogram's modality first, exactly like the CLI
    ``match`` command.
    """
    data = _require_kind(volume, IMAGE_DTYPE, "volume")
    hist = histogram_from_dict(histogram)
    config = SMConfig(modality=hist.modality, n_bins=hist.n_bins,
                      range=(hist.range_lo, hist.range_hi))
    vol = preclip_for_modality(Volume(data, volume.spacing), hist.modality)
    out = apply_sm(vol, hist, config)
    return ArrayHandle(out.data, out.spacing)


def py_metrics(pred: ArrayHandle, gt: ArrayHandle, spacing=None) -> dict:
    """Per-label segmentation metrics as the CLI ``evaluate`` JSON dict."""
    p = _require_kind(pred, LABEL_DTYPE, "pred")
    g = _require_kind(gt, LABEL_DTYPE, "gt")
    sp = tuple(float(s) for s in spacing) if spacing is not None else pred.spacing
    report = evaluate_pair(LabelMap(p, sp), LabelMap(g, sp))
    return report_to_dict(report)
