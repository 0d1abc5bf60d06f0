import numpy as np
import pytest

from voxaug import (
    LabelMap,
    PhantomSpec,
    Volume,
    build_displacement_field,
    intensity_jitter,
    make_phantom,
    sample_geom_params,
    sample_jitter_params,
    warp_volume,
)


def random_volume(rng, dims=(6, 7, 8), spacing=(1.0, 1.0, 1.0), scale=100.0):
    return Volume(rng.standard_normal(dims) * scale, spacing)


def random_labels(rng, dims=(6, 7, 8), n_labels=4, spacing=(1.0, 1.0, 1.0)):
    return LabelMap(rng.integers(0, n_labels, size=dims, dtype=np.int32), spacing)


def small_phantom(seed=0, dims=(24, 24, 24), n_labels=3, mode="nested-ellipsoids"):
    table = tuple((0.2 * k, 0.05) for k in range(n_labels))
    spec = PhantomSpec(
        seed=seed, dims=dims, n_labels=n_labels, shape_mode=mode, intensity_table=table
    )
    return make_phantom(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def replay_post_cda(img, lab, seed_or_rng, config):
    """Recompute the geometry+jitter stages with the documented draw order.

    Independent oracle for the norm-preservation contract: the augmented
    image must carry this stage output's Frobenius norm.
    """
    if isinstance(seed_or_rng, np.random.Generator):
        rng = seed_or_rng
    else:
        rng = np.random.default_rng(seed_or_rng)
    out = img
    if config.geometry_enabled:
        params = sample_geom_params(
            rng,
            translation_vox=config.translation_vox,
            rotation_rad=config.rotation_rad,
            scale_range=config.scale_range,
            elastic_vox=config.elastic_vox,
        )
        field = build_displacement_field(params, img.dims, img.spacing)
        out = warp_volume(out, field)
    if config.jitter_enabled:
        jp = sample_jitter_params(
            rng, shift=config.jitter_shift, scale_range=config.jitter_scale_range
        )
        out = intensity_jitter(out, jp)
    return out
