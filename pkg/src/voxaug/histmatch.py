"""Intensity quantile matching against an averaged reference histogram.

A pre-clipped image is summarized by a normalized cumulative histogram
over uniform bins. The reference ("source") histogram is the per-image
mean of such cumulative histograms over a set of volumes; it is fitted
once and persisted as JSON. Matching sends each voxel through its own
image's CDF and then through the generalized inverse of the reference
CDF: the returned intensity is the center of the reference bin whose
cumulative value is closest to the probability (lowest index on ties),
making the map monotone and a pure table lookup.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .volume import Volume

_DEFAULT_RANGES = {"ct": (-1023.0, 1024.0), "mr": (0.0, 2047.0)}


@dataclass(frozen=True)
class SMConfig:
    """Histogram geometry for one modality.

    The default range matches the modality's pre-clip window at unit
    resolution (2048 one-unit bins).
    """

    modality: str = "ct"
    n_bins: int = 2048
    range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.modality not in _DEFAULT_RANGES:
            raise DataError(f"modality must be one of {sorted(_DEFAULT_RANGES)}, got {self.modality!r}")
        if self.n_bins < 2:
            raise DataError(f"n_bins must be >= 2, got {self.n_bins}")
        rng = self.range if self.range is not None else _DEFAULT_RANGES[self.modality]
        lo, hi = (float(rng[0]), float(rng[1]))
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise DataError(f"range must satisfy lo < hi, got {rng}")
        object.__setattr__(self, "range", (lo, hi))


@dataclass(frozen=True, eq=False)
class IntensityHistogram:
    """Normalized cumulative intensity histogram over uniform bins."""

    n_bins: int
    range_lo: float
    range_hi: float
    cumulative: np.ndarray
    modality: str = "ct"

    def __post_init__(self):
        cum = np.asarray(self.cumulative, dtype=np.float64)
        if self.n_bins < 1 or cum.shape != (self.n_bins,):
            raise DataError(f"cumulative must have length n_bins={self.n_bins}, got {cum.shape}")
        if not self.range_lo < self.range_hi:
            raise DataError(f"range must satisfy lo < hi, got [{self.range_lo}, {self.range_hi}]")
        if (np.diff(cum) < 0).any():
            raise DataError("cumulative histogram must be nondecreasing")
        if (cum < 0).any() or (cum > 1).any():
            raise DataError("cumulative values must lie in [0, 1]")
        if abs(cum[-1] - 1.0) > 1e-6:
            raise DataError(f"cumulative histogram must end at 1, got {cum[-1]}")
        object.__setattr__(self, "cumulative", cum)

    @property
    def bin_width(self) -> float:
        return (self.range_hi - self.range_lo) / self.n_bins

    @property
    def bin_centers(self) -> np.ndarray:
        i = np.arange(self.n_bins, dtype=np.float64)
        return self.range_lo + (i + 0.5) * self.bin_width

    def matches_config(self, config: SMConfig) -> bool:
        return (
            self.n_bins == config.n_bins
            and (self.range_lo, self.range_hi) == config.range
            and self.modality == config.modality
        )


def _bin_indices(values: np.ndarray, config: SMConfig) -> np.ndarray:
    lo, hi = config.range
    scaled = (values.astype(np.float64) - lo) * (config.n_bins / (hi - lo))
    # Out-of-range values land in the boundary bins.
    return np.clip(np.floor(scaled).astype(np.int64), 0, config.n_bins - 1)


def compute_image_cdf(vol: Volume, config: SMConfig) -> IntensityHistogram:
    """Normalized cumulative histogram of one volume's intensities."""
    idx = _bin_indices(vol.data, config)
    counts = np.bincount(idx.ravel(), minlength=config.n_bins)
    cumulative = np.cumsum(counts, dtype=np.float64) / vol.data.size
    lo, hi = config.range
    return IntensityHistogram(config.n_bins, lo, hi, cumulative, config.modality)


def average_histograms(hists: Sequence[IntensityHistogram]) -> IntensityHistogram:
    """Per-bin mean of cumulative histograms, one equal vote per histogram.

    Accumulation is exact (``math.fsum``), so the result is independent
    of the order of ``hists``.
    """
    if len(hists) == 0:
        raise DataError("cannot average zero histograms")
    first = hists[0]
    for h in hists[1:]:
        if (h.n_bins, h.range_lo, h.range_hi, h.modality) != (
            first.n_bins,
            first.range_lo,
            first.range_hi,
            first.modality,
        ):
            raise DataError("histograms to average must share bins, range, and modality")
    stack = np.stack([h.cumulative for h in hists], axis=0)
    mean = np.array([math.fsum(col) for col in stack.T], dtype=np.float64) / len(hists)
    return IntensityHistogram(first.n_bins, first.range_lo, first.range_hi, mean, first.modality)


def fit_source_histogram(volumes: Sequence[Volume], config: SMConfig) -> IntensityHistogram:
    """Mean of per-volume cumulative histograms, one equal vote per volume."""
    if len(volumes) == 0:
        raise DataError("cannot fit a source histogram from zero volumes")
    return average_histograms([compute_image_cdf(v, config) for v in volumes])


def inverse_quantile(hist: IntensityHistogram, p: float) -> float:
    """Generalized inverse of the cumulative histogram at probability ``p``.

    Returns the center of the bin whose cumulative value is nearest to
    ``p``; ties resolve to the lowest bin index.
    """
    if not (0.0 <= p <= 1.0):
        raise DataError(f"probability must lie in [0, 1], got {p}")
    i = int(np.argmin((hist.cumulative - p) ** 2))
    return float(hist.bin_centers[i])


def _match_lut(target: IntensityHistogram, source: IntensityHistogram) -> np.ndarray:
    # For every target bin b: nearest source cumulative value to the
    # target's cumulative at b, lowest index on ties (np.argmin).
    diffs = source.cumulative[np.newaxis, :] - target.cumulative[:, np.newaxis]
    nearest = np.argmin(diffs**2, axis=1)
    return source.bin_centers[nearest]


def apply_sm(vol: Volume, source_hist: IntensityHistogram, config: SMConfig) -> Volume:
    """Remap ``vol`` so its intensity distribution follows ``source_hist``.

    ``vol`` must already be pre-clipped to the config's range and the
    histogram must have been fitted with the same config. The mapping is
    precomputed per bin, so the per-voxel work is one table lookup.
    """
    if not source_hist.matches_config(config):
        raise DataError(
            "histogram/config mismatch: "
            f"histogram has (modality={source_hist.modality!r}, n_bins={source_hist.n_bins}, "
            f"range=[{source_hist.range_lo}, {source_hist.range_hi}]), "
            f"config has (modality={config.modality!r}, n_bins={config.n_bins}, range={config.range})"
        )
    target = compute_image_cdf(vol, config)
    lut = _match_lut(target, source_hist)
    return Volume(lut[_bin_indices(vol.data, config)], vol.spacing)


# ---------------------------------------------------------------------------
# Persistence: JSON with the cumulative values in decimal form. Python's
# float repr round-trips exactly, so save/load is lossless.

def histogram_to_dict(hist: IntensityHistogram) -> dict:
    return {
        "n_bins": hist.n_bins,
        "range": [hist.range_lo, hist.range_hi],
        "modality": hist.modality,
        "cumulative": [float(v) for v in hist.cumulative],
    }


def histogram_from_dict(doc: dict) -> IntensityHistogram:
    try:
        return IntensityHistogram(
            n_bins=int(doc["n_bins"]),
            range_lo=float(doc["range"][0]),
            range_hi=float(doc["range"][1]),
            cumulative=np.asarray(doc["cumulative"], dtype=np.float64),
            modality=str(doc["modality"]),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise DataError(f"malformed histogram document: {exc}") from exc


def save_histogram(hist: IntensityHistogram, path) -> None:
    with open(path, "w") as fh:
        json.dump(histogram_to_dict(hist), fh)
        fh.write("\n")


def load_histogram(path) -> IntensityHistogram:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing histogram file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed histogram file {path}: {exc}") from exc
    return histogram_from_dict(doc)
