"""Probabilistic forecasting for graph-structured sensor series.

A parameter-free heat-diffusion prior over the sensor graph drafts each
forecast; a residual-aware denoising diffusion model, built around a
factored spectral denoiser, turns the draft into a calibrated ensemble.
"""

from .config import RunConfig, config_from_dict, load_config
from .data import (
    ChannelStats,
    SeriesStore,
    WindowSpec,
    compute_channel_stats,
    impute_rolling_mean,
    load_series_csv,
    make_store,
    normalize_store,
    save_series_csv,
    synth_generate,
    windows,
)
from .denoiser import FactoredSpectralDenoiser, FsdConfig, operation_counts
from .diffusion import (
    Conditioning,
    ForecastEnsemble,
    forward_sample,
    make_conditioning,
    residual_field,
    reverse_step,
    sample_ensemble,
    sample_trajectory,
    training_target,
)
from .errors import (
    ConfigError,
    ContractViolation,
    DegenerateInputError,
    IntegrationFailure,
    NumericFailure,
    OdecastError,
)
from .forecaster import (
    OdeDiffusionForecaster,
    RollingMeanImputer,
    TrainStatsNormalizer,
    persistence_forecast,
)
from .graph import SensorGraph, gft, igft, synthetic_graph
from .metrics import ScoreReport, crps_empirical, crps_mean, mae, rmse, score_windows
from .numerics import GradTape, RngStream
from .ode import OdeConfig, closed_form_solution, forecast_window, solve_dopri5
from .schedule import (
    NoiseSchedule,
    accelerated_step,
    approx_accelerated_step,
    linear_schedule,
    step_table,
)
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .training import (
    TrainSettings,
    build_training_set,
    fit_denoiser,
    forecast_window_batch,
    train_epoch,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelStats",
    "Conditioning",
    "ConfigError",
    "ContractViolation",
    "DegenerateInputError",
    "FactoredSpectralDenoiser",
    "ForecastEnsemble",
    "FsdConfig",
    "GradTape",
    "IntegrationFailure",
    "NoiseSchedule",
    "NumericFailure",
    "OdeConfig",
    "OdeDiffusionForecaster",
    "OdecastError",
    "RngStream",
    "RollingMeanImputer",
    "RunConfig",
    "ScoreReport",
    "SensorGraph",
    "SeriesStore",
    "TrainSettings",
    "TrainStatsNormalizer",
    "WindowSpec",
    "accelerated_step",
    "approx_accelerated_step",
    "build_training_set",
    "closed_form_solution",
    "compute_channel_stats",
    "config_from_dict",
    "crps_empirical",
    "crps_mean",
    "fit_denoiser",
    "forecast_window",
    "forecast_window_batch",
    "forward_sample",
    "gft",
    "igft",
    "impute_rolling_mean",
    "linear_schedule",
    "load_checkpoint",
    "load_config",
    "load_series_csv",
    "mae",
    "make_conditioning",
    "make_store",
    "normalize_store",
    "operation_counts",
    "persistence_forecast",
    "residual_field",
    "restore_model",
    "reverse_step",
    "rmse",
    "sample_ensemble",
    "sample_trajectory",
    "save_checkpoint",
    "save_series_csv",
    "score_windows",
    "solve_dopri5",
    "step_table",
    "synth_generate",
    "synthetic_graph",
    "train_epoch",
    "training_target",
    "windows",
]
