"""Memory-based car tracking filter for curbside parking utilization."""
from .detections import Detection, FrameObservation, RecordError, VehicleFeatures
from .geometry import (
    NOT_PARKED,
    GeometryError,
    LotRegion,
    MaskFootprint,
    NotParked,
    Parked,
    SiteGeometry,
    UtilizationSample,
    classify_parked,
    load_geometry,
    lot_utilization,
    region_fraction,
)
from .matching import MatchThresholds, histogram_distance, is_match, location_distance, model_distance
from .metrics import (
    FrameCounts,
    LabeledFrame,
    MatchedPair,
    MetricError,
    StayEvaluation,
    StayRecord,
    detection_accuracy,
    evaluate_report,
    evaluate_stays,
    match_detections_to_labels,
    spatial_accuracy,
    time_accuracy,
)
from .simgen import LotSpec, ScenarioConfig, ScenarioError, ScenarioTruth, degrade_stream, generate_scenario, simulate
from .streamio import (
    PipelineError,
    StreamFormatError,
    UtilizationReport,
    read_detection_stream,
    read_labels,
    read_reports,
    run_pipeline,
    write_detection_stream,
    write_reports,
)
from .tracking import (
    FilterConfig,
    FilteredFrame,
    FilterState,
    PresentSpan,
    StreamOrderError,
    TrackGroup,
    build_groups,
    group_location,
    infer_presence,
    run_filter,
)

__version__ = "0.1.0"
