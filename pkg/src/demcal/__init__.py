"""Calibration of detector error models from sensor-window experiments."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DemcalError, NumericalError
from .model import (
    ClassKey,
    DEM,
    Detector,
    DetectorErrorModel,
    Hyperedge,
    MeasCoord,
    Parametrization,
    build_parametrization,
    canonical_key,
    class_kind,
    cosine_similarity,
    instantiate,
    merge_prob,
    read_dem,
    write_dem,
)
from .codegen import (
    RepCodeSpec,
    SensorSuite,
    SensorWindow,
    build_sensors,
    check_coverage,
    planted_dem,
    planted_model,
    project_onto_suite,
    repetition_dem,
    restrict_to_window,
    uninformative_prior,
    window_detector_ids,
)
from .sampler import (
    ShotSet,
    read_shots,
    sample_shots,
    subsample_sensor_shots,
    write_shots,
)
from .fitprior import (
    DetectorStats,
    FitDiagnostic,
    FitResult,
    detector_stats,
    fit_edge_probs,
    fit_pairwise,
    fit_suite,
)
from .decode import (
    LerEstimate,
    MatchingGraph,
    SyndromeTable,
    build_matching_graph,
    count_failures,
    decode_bits,
    decode_shots,
    decompose_hyperedges,
    fit_ler_exponential,
    ler_estimate,
    mwpm_decode,
    scaling_flip_rate,
    tabulate_shots,
    wilson_interval,
)
from .harness import (
    RunConfig,
    RunResult,
    SweepPoint,
    SweepResult,
    cmd_check_coverage,
    cmd_decode,
    cmd_eval,
    cmd_fit,
    cmd_gen,
    cmd_sweep_cycles,
    cmd_train,
    config_echo,
    load_config,
    seed_prior,
)
from .rlopt import (
    AdamState,
    Baseline,
    EpochBatch,
    EpochRecord,
    Hyperparams,
    LossReport,
    Policy,
    QuadraticRewardSource,
    SensorRewardSource,
    TrainResult,
    advantages,
    compute_rewards,
    epochs_to_fraction,
    history_csv,
    importance_ratios,
    losses,
    make_policy,
    read_params,
    sample_policy,
    step,
    train,
    write_history,
    write_params,
)

__all__ = [
    "AdamState",
    "Baseline",
    "ClassKey",
    "ConfigError",
    "DEM",
    "DataError",
    "DemcalError",
    "Detector",
    "DetectorErrorModel",
    "EpochBatch",
    "EpochRecord",
    "Hyperedge",
    "Hyperparams",
    "LerEstimate",
    "LossReport",
    "MatchingGraph",
    "MeasCoord",
    "NumericalError",
    "Parametrization",
    "Policy",
    "QuadraticRewardSource",
    "RepCodeSpec",
    "RunConfig",
    "RunResult",
    "SensorRewardSource",
    "SensorSuite",
    "SensorWindow",
    "ShotSet",
    "SweepPoint",
    "SweepResult",
    "SyndromeTable",
    "TrainResult",
    "advantages",
    "build_matching_graph",
    "build_parametrization",
    "build_sensors",
    "canonical_key",
    "class_kind",
    "check_coverage",
    "cmd_check_coverage",
    "cmd_decode",
    "cmd_eval",
    "cmd_fit",
    "cmd_gen",
    "cmd_sweep_cycles",
    "cmd_train",
    "compute_rewards",
    "config_echo",
    "cosine_similarity",
    "count_failures",
    "decode_bits",
    "decode_shots",
    "decompose_hyperedges",
    "detector_stats",
    "DetectorStats",
    "epochs_to_fraction",
    "FitDiagnostic",
    "FitResult",
    "fit_edge_probs",
    "fit_ler_exponential",
    "fit_pairwise",
    "fit_suite",
    "history_csv",
    "importance_ratios",
    "instantiate",
    "ler_estimate",
    "load_config",
    "losses",
    "make_policy",
    "merge_prob",
    "mwpm_decode",
    "planted_dem",
    "planted_model",
    "project_onto_suite",
    "read_dem",
    "read_params",
    "read_shots",
    "repetition_dem",
    "restrict_to_window",
    "sample_policy",
    "sample_shots",
    "scaling_flip_rate",
    "seed_prior",
    "step",
    "subsample_sensor_shots",
    "tabulate_shots",
    "train",
    "uninformative_prior",
    "wilson_interval",
    "window_detector_ids",
    "write_dem",
    "write_history",
    "write_params",
    "write_shots",
]
