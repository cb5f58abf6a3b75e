"""Gap-aware multi-station air quality forecasting toolkit.

A numpy library plus the ``gapcast`` CLI covering the full pipeline:
hourly panel construction, AQI breakpoint conversion, boosted-tree spatial
gap filling, rolling-window dataset building, multi-horizon MLP/LSTM
forecasting, and category-split RMSE reporting, with a deterministic
synthetic data generator for end-to-end verification.
"""

from .aqi import (
    Band,
    BreakpointTable,
    append_aqi_channel,
    default_breakpoint_table,
    load_breakpoints,
    save_breakpoints,
    station_aqi,
    subindex,
    subindex_array,
)
from .evaluate import (
    EvalReport,
    RunPredictions,
    StationCategory,
    build_report,
    categorize_stations,
    chrono_split,
    render_report,
    report_from_csv,
    report_to_csv,
    rmse,
)
from .gapfill import ImputerGrid, impute, load_grid, save_grid, train_imputers
from .gbdt import (
    GbdtModel,
    GbdtParams,
    TreeNode,
    fit_gbdt,
    predict_gbdt,
    predict_many,
)
from .models import (
    LstmModel,
    MlpModel,
    gradient_check,
    load_checkpoint,
    masked_mse,
    save_checkpoint,
)
from .panel import (
    AQI,
    AvailabilityMatrix,
    BASE_CHANNELS,
    Channel,
    EnvChannel,
    NormParams,
    Pollutant,
    StationPanel,
    VehicleClass,
    VehicleCount,
    apply_norm,
    availability,
    channel_name,
    fit_norm,
    gap_fraction,
    hourly_aggregate,
    invert_norm,
)
from .pipeline import (
    PipelineConfig,
    RunSpec,
    assemble_features,
    aggregate_vehicle_features,
    execute_run,
    load_config,
    run_eval,
)
from .synth import OutageBlock, SplitMix64, SynthConfig, generate, inject_outages
from .training import (
    EncodedWindows,
    Forecast,
    TrainConfig,
    encode_windows,
    persistence,
    persistence_batch,
    predict_batch,
    train,
)
from .windows import (
    Candidate,
    FeatureSet,
    GapRule,
    WindowConfig,
    WindowSample,
    build_windows,
    enumerate_candidates,
)

__version__ = "0.1.0"
