"""voxaug: volumetric augmentation, intensity quantile matching, and
segmentation metrics for 3D grayscale images."""

from .errors import DataError, DegenerateInputError
from .geometry import (
    DisplacementField,
    GeomParams,
    IntensityJitterParams,
    build_displacement_field,
    intensity_jitter,
    sample_geom_params,
    sample_jitter_params,
    warp_labels,
    warp_volume,
)
from .histmatch import (
    IntensityHistogram,
    SMConfig,
    apply_sm,
    average_histograms,
    compute_image_cdf,
    fit_source_histogram,
    histogram_from_dict,
    histogram_to_dict,
    inverse_quantile,
    load_histogram,
    save_histogram,
)
from .metrics import (
    LabelMetrics,
    MetricReport,
    SoftPrediction,
    SurfacePointSet,
    assd,
    dice_per_label,
    evaluate_pair,
    extract_surface,
    generalized_dice_loss,
    hd95,
    mean_report,
    report_from_dict,
    report_to_dict,
)
from .randconv import (
    AugmentConfig,
    BlendMaps,
    GaussianKernelSpec,
    RandConvNet,
    SrcSample,
    apply_randconv,
    apply_src_sample,
    augment_sample,
    mix_with_original,
    renormalize_frobenius,
    sample_randconv,
    smooth_masks,
    src_binary,
    src_blend,
)
from .volume import (
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

__version__ = "0.1.0"
