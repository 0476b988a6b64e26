"""FFEINR: feature-enhanced implicit neural representation for flow-field
spatio-temporal super-resolution and data reduction."""

__version__ = "0.1.0"

from .encoder import Encoder, EncoderConfig, FeatureGrid
from .flowdata import (
    FlowField,
    NormStats,
    QueryBatch,
    SlicePair,
    TrainingSample,
    crop_patch,
    denormalize,
    downsample,
    gen_taylor_green,
    load_raw,
    normalize,
    save_raw,
    slice_pair,
)
from .inr_core import (
    FFEINRModel,
    ModelConfig,
    Siren,
    SirenLayerSpec,
    SpatialINR,
    TemporalINR,
    lookup_features,
    siren_init,
    siren_uniform_bound,
    warp,
)
from .metrics import (
    MetricReport,
    psnr,
    psnr_per_frame,
    rmse_per_channel,
    ssim,
    trilinear_upsample,
)
from .reduction import (
    Archive,
    compress,
    compress_to_file,
    compression_rate,
    decompress,
    read_archive,
    write_archive,
)
from .training import (
    Checkpoint,
    TrainConfig,
    TrainingDivergedError,
    charbonnier,
    evaluate,
    reconstruct,
    train_one_stage,
    train_two_stage,
    validation_report,
)
from .viz import (
    RenderedImage,
    Streamline,
    random_seeds,
    render_error_map,
    render_magnitude_map,
    render_streamline_map,
    trace_streamlines,
    write_png,
)

__all__ = [
    "Archive",
    "Checkpoint",
    "Encoder",
    "EncoderConfig",
    "FFEINRModel",
    "FeatureGrid",
    "FlowField",
    "MetricReport",
    "ModelConfig",
    "NormStats",
    "QueryBatch",
    "RenderedImage",
    "Siren",
    "SirenLayerSpec",
    "SlicePair",
    "SpatialINR",
    "Streamline",
    "TemporalINR",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingSample",
    "charbonnier",
    "compress",
    "compress_to_file",
    "compression_rate",
    "crop_patch",
    "decompress",
    "denormalize",
    "downsample",
    "evaluate",
    "gen_taylor_green",
    "load_raw",
    "lookup_features",
    "normalize",
    "psnr",
    "psnr_per_frame",
    "random_seeds",
    "read_archive",
    "reconstruct",
    "render_error_map",
    "render_magnitude_map",
    "render_streamline_map",
    "rmse_per_channel",
    "save_raw",
    "siren_init",
    "siren_uniform_bound",
    "slice_pair",
    "ssim",
    "trace_streamlines",
    "train_one_stage",
    "train_two_stage",
    "trilinear_upsample",
    "validation_report",
    "warp",
    "write_archive",
    "write_png",
]
