import json
import struct

import numpy as np
import pytest
import scipy.ndimage

from voxaug import (
    DataError,
    DegenerateInputError,
    LabelMap,
    PhantomSpec,
    Volume,
    load_labels,
    load_volume,
    make_phantom,
    normalize_ct,
    normalize_mr,
    preclip_ct,
    preclip_mr,
    resample_labels_to_grid,
    resample_to_grid,
    save_labels,
    save_volume,
)

from conftest import random_labels, random_volume


# ---------------------------------------------------------------------------
# Containers

def test_volume_rejects_bad_inputs():
    with pytest.raises(DataError):
        Volume(np.zeros((2, 2)), (1, 1, 1))
    with pytest.raises(DataError):
        Volume(np.zeros((2, 2, 2)), (1, 0, 1))
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        Volume(bad, (1, 1, 1))


def test_volume_data_is_read_only(rng):
    vol = random_volume(rng)
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0


def test_labelmap_label_set(rng):
    arr = np.zeros((4, 4, 4), dtype=np.int32)
    arr[0, 0, 0] = 3
    arr[1, 1, 1] = 7
    lab = LabelMap(arr, (1, 1, 1))
    assert lab.label_set == (0, 3, 7)
    with pytest.raises(DataError):
        LabelMap(arr - 1, (1, 1, 1))
    with pytest.raises(DataError):
        LabelMap(arr.astype(np.float32), (1, 1, 1))


def test_labelmap_includes_background_even_if_absent():
    lab = LabelMap(np.ones((3, 3, 3), dtype=np.int32), (1, 1, 1))
    assert lab.label_set == (0, 1)


# ---------------------------------------------------------------------------
# SVOL I/O

def test_svol_declared_layout(tmp_path):
    # Hand-written file: 2x2x2 f32 payload [0..7] in x-fastest order, so the
    # value at (x, y, z) = (1, 1, 1) is 7 (linear index 1 + 2*(1 + 2*1)).
    payload = struct.pack("<8f", *range(8))
    (tmp_path / "t.svol.bin").write_bytes(payload)
    header = {
        "dims": [2, 2, 2],
        "spacing_mm": [1.0, 2.0, 3.0],
        "dtype": "f32",
        "byte_order": "le",
        "data": "t.svol.bin",
    }
    (tmp_path / "t.svol.json").write_text(json.dumps(header))
    vol = load_volume(tmp_path / "t")
    assert vol.data[1, 1, 1] == 7.0
    assert vol.data[1, 0, 0] == 1.0
    assert vol.data[0, 1, 0] == 2.0
    assert vol.data[0, 0, 1] == 4.0
    assert vol.spacing == (1.0, 2.0, 3.0)


def test_svol_payload_size_mismatch(tmp_path):
    (tmp_path / "t.svol.bin").write_bytes(struct.pack("<7f", *range(7)))
    header = {
        "dims": [2, 2, 2],
        "spacing_mm": [1, 1, 1],
        "dtype": "f32",
        "byte_order": "le",
        "data": "t.svol.bin",
    }
    (tmp_path / "t.svol.json").write_text(json.dumps(header))
    with pytest.raises(DataError, match="size mismatch"):
        load_volume(tmp_path / "t")


def test_svol_unsupported_dtype_and_missing(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_volume(tmp_path / "absent")
    (tmp_path / "t.svol.bin").write_bytes(b"\x00" * 8)
    header = {
        "dims": [1, 1, 2],
        "spacing_mm": [1, 1, 1],
        "dtype": "f64",
        "byte_order": "le",
        "data": "t.svol.bin",
    }
    (tmp_path / "t.svol.json").write_text(json.dumps(header))
    with pytest.raises(DataError, match="dtype"):
        load_volume(tmp_path / "t")


def test_svol_nonfinite_payload_rejected(tmp_path):
    (tmp_path / "t.svol.bin").write_bytes(struct.pack("<2f", 1.0, float("inf")))
    header = {
        "dims": [2, 1, 1],
        "spacing_mm": [1, 1, 1],
        "dtype": "f32",
        "byte_order": "le",
        "data": "t.svol.bin",
    }
    (tmp_path / "t.svol.json").write_text(json.dumps(header))
    with pytest.raises(DataError, match="non-finite"):
        load_volume(tmp_path / "t")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_volume_roundtrip_bitwise(tmp_path, seed):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, dims=(5, 4, 6), spacing=(0.7, 1.3, 2.0))
    save_volume(vol, tmp_path / "v")
    back = load_volume(tmp_path / "v")
    assert back.data.dtype == np.float32
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_labels_roundtrip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    lab = random_labels(rng, dims=(5, 6, 4), n_labels=5)
    save_labels(lab, tmp_path / "l")
    back = load_labels(tmp_path / "l")
    assert np.array_equal(back.labels, lab.labels)
    assert back.label_set == lab.label_set


def test_labels_roundtrip_sparse_set(tmp_path):
    arr = np.zeros((4, 4, 4), dtype=np.int32)
    arr[1, 2, 3] = 3
    arr[2, 2, 2] = 7
    save_labels(LabelMap(arr, (1, 1, 1)), tmp_path / "l")
    assert load_labels(tmp_path / "l").label_set == (0, 3, 7)


def test_labels_all_zero_roundtrip(tmp_path):
    lab = LabelMap(np.zeros((3, 3, 3), dtype=np.int32), (1, 1, 1))
    save_labels(lab, tmp_path / "l")
    assert np.array_equal(load_labels(tmp_path / "l").labels, lab.labels)


def test_labels_overflow_error(tmp_path):
    arr = np.zeros((2, 2, 2), dtype=np.int32)
    arr[0, 0, 0] = 70000
    with pytest.raises(DataError, match="16-bit"):
        save_labels(LabelMap(arr, (1, 1, 1)), tmp_path / "l")


# ---------------------------------------------------------------------------
# Normalization / pre-clipping

def test_normalize_ct_fixtures():
    vol = Volume(np.array([[[2048.0, 0.0, -4096.0, 1024.0]]]), (1, 1, 1))
    out = normalize_ct(vol)
    assert out.data[0, 0, 0] == 1.0
    assert out.data[0, 0, 1] == 0.0
    assert out.data[0, 0, 2] == -1.0
    assert out.data[0, 0, 3] == 0.5


def test_normalize_ct_range_and_monotone(rng):
    vol = random_volume(rng, scale=5000.0)
    out = normalize_ct(vol)
    assert out.data.min() >= -1.0 and out.data.max() <= 1.0
    v = np.sort(vol.data.ravel())
    w = normalize_ct(Volume(v.reshape(1, 1, -1), (1, 1, 1))).data.ravel()
    assert (np.diff(w) >= 0).all()


def _percentile_fixture():
    # 11 values: interpolation ranks land on samples, p10 = 100, p90 = 900.
    vals = np.arange(11, dtype=np.float64) * 100.0
    assert np.percentile(vals, 10) == 100.0 and np.percentile(vals, 90) == 900.0
    return Volume(vals.reshape(1, 1, 11), (1, 1, 1))


def test_normalize_mr_fixtures():
    out = normalize_mr(_percentile_fixture()).data.ravel()
    assert out[1] == -1.0  # p10 endpoint
    assert out[9] == 1.0  # p90 endpoint
    assert out[5] == 0.0  # midpoint


def test_normalize_mr_affine(rng):
    vol = random_volume(rng, scale=300.0)
    out = normalize_mr(vol)
    x = vol.data.ravel().astype(np.float64)
    y = out.data.ravel().astype(np.float64)
    # Affine map: recover from two points, check a third.
    a = (y[1] - y[0]) / (x[1] - x[0])
    b = y[0] - a * x[0]
    assert np.allclose(y, a * x + b, atol=1e-5)


def test_normalize_mr_degenerate():
    with pytest.raises(DegenerateInputError):
        normalize_mr(Volume(np.full((3, 3, 3), 7.0), (1, 1, 1)))


def test_preclip_ct_fixtures():
    vol = Volume(np.array([[[-2000.0, 500.0, 3000.0]]]), (1, 1, 1))
    out = preclip_ct(vol).data.ravel()
    assert out[0] == -1023.0 and out[1] == 500.0 and out[2] == 1024.0


def test_preclip_mr_fixtures():
    # min = 0 and p90 = 100 exactly (11 values, linear interpolation).
    vals = np.array([0.0, 10, 20, 30, 40, 50, 60, 70, 80, 100, 200], dtype=np.float64)
    assert np.percentile(vals, 90) == 100.0
    out = preclip_mr(Volume(vals.reshape(1, 1, 11), (1, 1, 1))).data.ravel()
    assert out[9] == 2047.0  # p90 -> 2047
    assert out[0] == 0.0  # min -> 0
    assert out[10] == 2047.0  # beyond p90 clips
    assert np.all(out >= 0) and np.all(out <= 2047)


def test_preclip_mr_negative_minimum():
    vals = np.linspace(-50.0, 50.0, 64).reshape(4, 4, 4)
    out = preclip_mr(Volume(vals, (1, 1, 1)))
    assert out.data.min() == 0.0


def test_preclip_monotone(rng):
    v = np.sort(rng.standard_normal(200) * 800.0)
    for op in (preclip_ct, preclip_mr):
        w = op(Volume(v.reshape(1, 1, -1), (1, 1, 1))).data.ravel()
        assert (np.diff(w) >= 0).all()


def test_preclip_mr_degenerate():
    with pytest.raises(DegenerateInputError):
        preclip_mr(Volume(np.full((3, 3, 3), 5.0), (1, 1, 1)))


# ---------------------------------------------------------------------------
# Resampling

def test_resample_identity_bitwise(rng):
    vol = random_volume(rng, dims=(7, 6, 5), spacing=(0.7, 1.1, 2.3))
    out = resample_to_grid(vol, vol.dims, vol.spacing, vol.center_mm())
    assert np.array_equal(out.data, vol.data)


def test_resample_upsample_ramp():
    # Ramp in x; doubling resolution must hit the ramp at half-steps.
    x = np.arange(5, dtype=np.float64)
    vol = Volume(np.broadcast_to(x[:, None, None], (5, 5, 5)).copy(), (1, 1, 1))
    out = resample_to_grid(vol, (9, 5, 5), (0.5, 1, 1), vol.center_mm())
    expected = np.broadcast_to(np.arange(9)[:, None, None] * 0.5, (9, 5, 5))
    assert np.allclose(out.data, expected, atol=1e-6)


def test_resample_constant_inside():
    vol = Volume(np.full((8, 8, 8), 3.25), (1, 1, 1))
    out = resample_to_grid(vol, (4, 4, 4), (1, 1, 1), vol.center_mm())
    assert np.array_equal(out.data, np.full((4, 4, 4), np.float32(3.25)))


def test_resample_out_of_bounds_zero():
    vol = Volume(np.full((4, 4, 4), 5.0), (1, 1, 1))
    # Target grid twice as large: corners land outside and must read 0.
    out = resample_to_grid(vol, (12, 12, 12), (1, 1, 1), vol.center_mm())
    assert out.data[0, 0, 0] == 0.0
    assert out.data[6, 6, 6] == 5.0


def test_resample_labels_nearest(rng):
    lab = random_labels(rng, dims=(6, 6, 6), n_labels=3)
    out = resample_labels_to_grid(lab, lab.dims, lab.spacing, (2.5, 2.5, 2.5))
    assert np.array_equal(out.labels, lab.labels)
    big = resample_labels_to_grid(lab, (18, 18, 18), (1, 1, 1), (2.5, 2.5, 2.5))
    assert set(np.unique(big.labels)) <= set(lab.label_set)


# ---------------------------------------------------------------------------
# Phantoms

def _spec(seed=5, dims=(20, 20, 20), n_labels=3, mode="nested-ellipsoids", stds=0.1):
    table = tuple((float(k), stds) for k in range(n_labels))
    return PhantomSpec(seed=seed, dims=dims, n_labels=n_labels, shape_mode=mode,
                       intensity_table=table)


def test_phantom_deterministic():
    img1, lab1 = make_phantom(_spec())
    img2, lab2 = make_phantom(_spec())
    assert np.array_equal(img1.data, img2.data)
    assert np.array_equal(lab1.labels, lab2.labels)


def test_phantom_seeds_differ():
    base, _ = make_phantom(_spec(seed=0))
    differing = 0
    for seed in range(1, 21):
        img, _ = make_phantom(_spec(seed=seed))
        if not np.array_equal(img.data, base.data):
            differing += 1
    assert differing == 20


def test_phantom_foreground_connected():
    _, lab = make_phantom(_spec(n_labels=2))
    structure = np.ones((3, 3, 3), dtype=bool)  # 26-connectivity
    _, n_components = scipy.ndimage.label(lab.labels > 0, structure=structure)
    assert n_components == 1


def test_phantom_noise_free_value_count():
    spec = _spec(n_labels=4, stds=0.0)
    img, _ = make_phantom(spec)
    assert len(np.unique(img.data)) == 4


def test_phantom_coverage():
    for mode in ("nested-ellipsoids", "blobs"):
        spec = _spec(seed=3, dims=(32, 32, 32), n_labels=5, mode=mode)
        _, lab = make_phantom(spec)
        counts = np.bincount(lab.labels.ravel(), minlength=5)
        assert (counts >= 0.01 * lab.labels.size).all()


def test_phantom_unsatisfiable():
    table = tuple((float(k), 0.0) for k in range(16))
    spec = PhantomSpec(seed=0, dims=(4, 4, 4), n_labels=16, shape_mode="nested-ellipsoids",
                       intensity_table=table)
    with pytest.raises(DataError, match="unsatisfiable"):
        make_phantom(spec)


def test_phantom_blobs_deterministic():
    spec = _spec(seed=11, dims=(24, 24, 24), n_labels=4, mode="blobs")
    img1, lab1 = make_phantom(spec)
    img2, lab2 = make_phantom(spec)
    assert np.array_equal(img1.data, img2.data)
    assert np.array_equal(lab1.labels, lab2.labels)
