"""Spectral scene analysis: stretching, automated labeling, detection, evaluation."""

from ._version import __version__
from .cube import (
    BAND_ROLES,
    SCORE_KINDS,
    BandMeta,
    BinaryMask,
    RasterCube,
    ScoreMap,
    Spectrum,
    TargetSpectrum,
    load_cube,
    load_mask,
    load_score_map,
    load_spectral_library,
    save_cube,
    save_mask,
    save_score_map,
)
from .detectors import (
    SceneStats,
    compute_scene_stats,
    detect_map,
    mf,
    rx,
    sam,
    scene_stats_from_moments,
)
from .errors import (
    ComputeError,
    ConfigError,
    DataError,
    FormatError,
    SpecScanError,
    StageError,
)
from .evaluation import (
    BenchRecord,
    ErrorReport,
    SegMetrics,
    bench_detector,
    compare_paths,
    render_bench_table,
    render_metrics_table,
    seg_metrics,
    serialize_detector_params,
)
from .labeling import (
    ClearSkyLine,
    OtsuResult,
    band_threshold_label,
    binarize,
    fit_clear_sky_line,
    hot,
    ndwi,
    otsu_threshold,
)
from .pipeline import (
    APPLICATIONS,
    PipelineConfig,
    PipelineResult,
    SummaryMessage,
    build_summary,
    connected_boxes,
    emit_summary,
    parse_summary,
    run_pipeline,
)
from .preprocess import StretchParams, band_quantiles, stretch_band, stretch_cube

__all__ = [
    "__version__",
    "BAND_ROLES",
    "SCORE_KINDS",
    "APPLICATIONS",
    "BandMeta",
    "BinaryMask",
    "RasterCube",
    "ScoreMap",
    "Spectrum",
    "TargetSpectrum",
    "SceneStats",
    "SegMetrics",
    "ErrorReport",
    "BenchRecord",
    "ClearSkyLine",
    "OtsuResult",
    "StretchParams",
    "PipelineConfig",
    "PipelineResult",
    "SummaryMessage",
    "SpecScanError",
    "FormatError",
    "DataError",
    "ComputeError",
    "ConfigError",
    "StageError",
    "load_cube",
    "save_cube",
    "load_mask",
    "save_mask",
    "load_score_map",
    "save_score_map",
    "load_spectral_library",
    "band_quantiles",
    "stretch_band",
    "stretch_cube",
    "ndwi",
    "fit_clear_sky_line",
    "hot",
    "otsu_threshold",
    "binarize",
    "band_threshold_label",
    "compute_scene_stats",
    "scene_stats_from_moments",
    "sam",
    "mf",
    "rx",
    "detect_map",
    "seg_metrics",
    "compare_paths",
    "bench_detector",
    "serialize_detector_params",
    "render_bench_table",
    "render_metrics_table",
    "run_pipeline",
    "connected_boxes",
    "build_summary",
    "emit_summary",
    "parse_summary",
]
