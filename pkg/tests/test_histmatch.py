import numpy as np
import pytest

from voxaug import (
    DataError,
    IntensityHistogram,
    SMConfig,
    Volume,
    apply_sm,
    average_histograms,
    compute_image_cdf,
    fit_source_histogram,
    histogram_from_dict,
    histogram_to_dict,
    inverse_quantile,
    load_histogram,
    make_phantom,
    save_histogram,
)
from voxaug.volume import PhantomSpec


def tiny_config(n_bins=4, lo=-0.5, hi=3.5, modality="ct"):
    return SMConfig(modality=modality, n_bins=n_bins, range=(lo, hi))


def worked_example_hist():
    # Four bins centered at 0, 1, 2, 3 with cumulative [.25, .5, .75, 1].
    return IntensityHistogram(4, -0.5, 3.5, np.array([0.25, 0.5, 0.75, 1.0]))


def constant_volume(value, dims=(4, 4, 4)):
    return Volume(np.full(dims, float(value)), (1, 1, 1))


# ---------------------------------------------------------------------------
# CDF computation

def test_cdf_constant_volume_is_step():
    config = tiny_config()
    h = compute_image_cdf(constant_volume(1.0), config)  # bin 1
    assert np.array_equal(h.cumulative, [0.0, 1.0, 1.0, 1.0])


def test_cdf_uniform_samples():
    rng = np.random.default_rng(0)
    config = tiny_config(n_bins=4, lo=0.0, hi=1.0)
    n = 16 * 16 * 16
    vol = Volume(rng.uniform(0.0, 1.0, size=(16, 16, 16)), (1, 1, 1))
    h = compute_image_cdf(vol, config)
    sigma = np.sqrt(0.25 * 0.75 / n)
    for i, expected in enumerate([0.25, 0.5, 0.75, 1.0]):
        assert abs(h.cumulative[i] - expected) <= 3 * sigma + 1e-12


def test_cdf_last_is_exactly_one(rng):
    config = SMConfig("mr")
    vol = Volume(rng.uniform(0, 2047, size=(6, 6, 6)), (1, 1, 1))
    assert compute_image_cdf(vol, config).cumulative[-1] == 1.0


def test_cdf_out_of_range_counts_in_boundary_bins():
    config = tiny_config(lo=0.0, hi=4.0)
    vol = Volume(np.array([[[-5.0, 10.0]]]), (1, 1, 1))
    h = compute_image_cdf(vol, config)
    assert h.cumulative[0] == 0.5  # low outlier in first bin
    assert h.cumulative[-1] == 1.0  # high outlier in last bin


# ---------------------------------------------------------------------------
# Averaging

def test_fit_single_volume_equals_own_cdf(rng):
    config = SMConfig("mr", n_bins=64, range=(0.0, 64.0))
    vol = Volume(rng.uniform(0, 64, size=(8, 8, 8)), (1, 1, 1))
    fitted = fit_source_histogram([vol], config)
    assert np.array_equal(fitted.cumulative, compute_image_cdf(vol, config).cumulative)


def test_fit_two_identical_volumes(rng):
    config = SMConfig("mr", n_bins=32, range=(0.0, 32.0))
    vol = Volume(rng.uniform(0, 32, size=(6, 6, 6)), (1, 1, 1))
    fitted = fit_source_histogram([vol, vol], config)
    assert np.array_equal(fitted.cumulative, compute_image_cdf(vol, config).cumulative)


def test_fit_two_steps_average_to_staircase():
    config = tiny_config()
    fitted = fit_source_histogram([constant_volume(1.0), constant_volume(2.0)], config)
    assert np.array_equal(fitted.cumulative, [0.0, 0.5, 1.0, 1.0])


def test_fit_empty_sequence():
    with pytest.raises(DataError):
        fit_source_histogram([], SMConfig("ct"))


def test_average_histograms_order_independent(rng):
    config = SMConfig("mr", n_bins=128, range=(0.0, 128.0))
    hists = [
        compute_image_cdf(Volume(rng.uniform(0, 128, size=(5, 5, 5)), (1, 1, 1)), config)
        for _ in range(5)
    ]
    forward = average_histograms(hists)
    backward = average_histograms(hists[::-1])
    assert np.array_equal(forward.cumulative, backward.cumulative)


# ---------------------------------------------------------------------------
# Inverse quantile

def test_inverse_quantile_worked_example():
    h = worked_example_hist()
    # (0.5 - 0.6)^2 = 0.01 beats (0.75 - 0.6)^2 = 0.0225, so bin 1 wins.
    assert inverse_quantile(h, 0.6) == 1.0


def test_inverse_quantile_endpoints():
    h = worked_example_hist()
    assert inverse_quantile(h, 0.0) == 0.0  # first bin center
    # p = 1: lowest-index bin whose cumulative equals 1.
    h2 = IntensityHistogram(4, -0.5, 3.5, np.array([0.25, 1.0, 1.0, 1.0]))
    assert inverse_quantile(h2, 1.0) == 1.0


def test_inverse_quantile_rejects_bad_p():
    h = worked_example_hist()
    with pytest.raises(DataError):
        inverse_quantile(h, -0.1)
    with pytest.raises(DataError):
        inverse_quantile(h, 1.1)


def test_inverse_quantile_matches_argmin_scan(rng):
    cum = np.sort(rng.uniform(0, 1, size=32))
    cum[-1] = 1.0
    h = IntensityHistogram(32, 0.0, 32.0, cum)
    for p in rng.uniform(0, 1, size=50):
        best = min(range(32), key=lambda i: ((cum[i] - p) ** 2, i))
        assert inverse_quantile(h, p) == h.bin_centers[best]


# ---------------------------------------------------------------------------
# Matching

def mr_phantom(seed, means, stds=25.0, dims=(24, 24, 24), n_labels=3):
    table = tuple((float(m), stds) for m in means)
    spec = PhantomSpec(seed=seed, dims=dims, n_labels=n_labels,
                       shape_mode="nested-ellipsoids", intensity_table=table)
    return make_phantom(spec)


def test_apply_sm_self_match_near_identity():
    img, _ = mr_phantom(seed=3, means=(300, 900, 1500))
    config = SMConfig("mr")
    hist = fit_source_histogram([img], config)
    matched = apply_sm(img, hist, config)
    assert np.abs(matched.data.astype(np.float64) - img.data).max() <= hist.bin_width


def test_apply_sm_constant_volume():
    config = SMConfig("mr", n_bins=8, range=(0.0, 8.0))
    source, _ = mr_phantom(seed=1, means=(1, 4, 7), stds=0.5, dims=(12, 12, 12))
    hist = fit_source_histogram([Volume(np.clip(source.data, 0, 8), (1, 1, 1))], config)
    out = apply_sm(constant_volume(3.0), hist, config)
    assert len(np.unique(out.data)) == 1


def test_apply_sm_monotone(rng):
    img, _ = mr_phantom(seed=5, means=(200, 700, 1300))
    source, _ = mr_phantom(seed=6, means=(400, 900, 1600))
    config = SMConfig("mr")
    hist = fit_source_histogram([source], config)
    matched = apply_sm(img, hist, config)
    flat_in = img.data.ravel().astype(np.float64)
    flat_out = matched.data.ravel().astype(np.float64)
    i = rng.integers(0, flat_in.size, size=10_000)
    j = rng.integers(0, flat_in.size, size=10_000)
    lo = np.where(flat_in[i] <= flat_in[j], i, j)
    hi = np.where(flat_in[i] <= flat_in[j], j, i)
    assert (flat_out[lo] <= flat_out[hi]).all()


def test_apply_sm_range_containment():
    img, _ = mr_phantom(seed=7, means=(100, 1000, 1900), stds=80.0)
    source, _ = mr_phantom(seed=8, means=(300, 800, 1200), stds=40.0)
    config = SMConfig("mr")
    hist = fit_source_histogram([source], config)
    matched = apply_sm(img, hist, config)
    assert matched.data.min() >= hist.range_lo
    assert matched.data.max() <= hist.range_hi


def test_apply_sm_idempotent_at_bin_resolution():
    img, _ = mr_phantom(seed=9, means=(250, 800, 1400))
    source, _ = mr_phantom(seed=10, means=(500, 1000, 1700))
    config = SMConfig("mr")
    hist = fit_source_histogram([source], config)
    once = apply_sm(img, hist, config)
    twice = apply_sm(once, hist, config)
    assert np.abs(twice.data.astype(np.float64) - once.data).max() <= hist.bin_width


def test_apply_sm_per_tissue_means():
    # Source and target share label geometry; intensities are related by a
    # monotone remap. Matching must land each tissue near its source mean.
    source_img, labels = mr_phantom(seed=21, means=(400, 900, 1600))
    target_img, _ = mr_phantom(seed=21, means=(150, 500, 1100))
    config = SMConfig("mr")
    hist = fit_source_histogram([source_img], config)
    matched = apply_sm(target_img, hist, config)
    for k in labels.label_set:
        region = labels.labels == k
        src_mean = source_img.data[region].astype(np.float64).mean()
        got_mean = matched.data[region].astype(np.float64).mean()
        assert abs(got_mean - src_mean) <= 2 * hist.bin_width


def test_apply_sm_config_mismatch():
    img, _ = mr_phantom(seed=11, means=(200, 600, 1000))
    hist = fit_source_histogram([img], SMConfig("mr", n_bins=1024))
    with pytest.raises(DataError, match="mismatch"):
        apply_sm(img, hist, SMConfig("mr", n_bins=2048))


# ---------------------------------------------------------------------------
# Persistence

def test_histogram_roundtrip_exact(tmp_path, rng):
    config = SMConfig("mr")
    vols = [Volume(rng.uniform(0, 2047, size=(6, 6, 6)), (1, 1, 1)) for _ in range(3)]
    hist = fit_source_histogram(vols, config)
    save_histogram(hist, tmp_path / "h.json")
    back = load_histogram(tmp_path / "h.json")
    assert back.n_bins == hist.n_bins
    assert (back.range_lo, back.range_hi) == (hist.range_lo, hist.range_hi)
    assert back.modality == hist.modality
    assert np.array_equal(back.cumulative, hist.cumulative)


def test_histogram_dict_roundtrip():
    hist = worked_example_hist()
    assert np.array_equal(histogram_from_dict(histogram_to_dict(hist)).cumulative, hist.cumulative)


def test_histogram_validation():
    with pytest.raises(DataError):
        IntensityHistogram(4, -0.5, 3.5, np.array([0.5, 0.25, 0.75, 1.0]))  # not monotone
    with pytest.raises(DataError):
        IntensityHistogram(4, -0.5, 3.5, np.array([0.25, 0.5, 0.75, 0.9]))  # last != 1
    with pytest.raises(DataError):
        SMConfig("ct", n_bins=1)
    with pytest.raises(DataError):
        SMConfig("pet")


def test_load_histogram_missing(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_histogram(tmp_path / "absent.json")
