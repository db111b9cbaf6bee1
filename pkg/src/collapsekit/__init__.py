"""collapsekit: loss-curve collapse analysis, prediction, and monitoring."""

from .curves import (
    LossCurve,
    LossSample,
    RunConfig,
    export,
    ingest,
    load_config,
    resample,
    save_config,
    smooth,
    smoothing_window_from_tokens,
    training_fraction,
)
from .earlystop import (
    StopDecision,
    SweepEntry,
    decide,
    evaluate_strategy,
    expected_random_gap,
    infer_final_loss,
)
from .errors import CollapseKitError, CoverageError, InfeasibleError, IngestError
from .monitor import MonitorPolicy, compare_offline, watch
from .normalize import (
    Alert,
    NormalizedCurve,
    ResidualReport,
    normalize_early_align,
    normalize_estimate,
    normalize_final,
    residuals,
)
from .nqm import (
    NqmConfig,
    SimulatedCurve,
    expected_loss,
    kappa,
    normalized_expected_curve,
    simulate,
)
from .predictor import (
    AlternatingFit,
    CurveMeta,
    PredictorParams,
    corpus_macro_mae,
    fit_alternating,
    mae,
    per_curve_oracle_fit,
    predict,
)
from .scaling import (
    ChinchillaFit,
    SymmetricLaw,
    compression_cost,
    compression_tokens_factor,
    effective_tpp_moe,
    fit_chinchilla,
    normalized_constant_lr_curve,
    normalized_tpp_curve,
    optimal_allocation,
    parameter_wall,
)
from .schedules import LrSchedule, constant, decay_to_zero, eta_at
from .synth import GeneratedRun, SynthOutput, SynthSpec, corpus, generate
from .timescale import (
    TimescaleSummary,
    instantaneous_tau,
    optimal_batch_for_data,
    optimal_tau_for_tpp,
    tau,
)

__version__ = "0.1.0"
