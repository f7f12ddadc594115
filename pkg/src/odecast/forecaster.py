"""Scikit-learn style facade over the full forecasting pipeline.

``OdeDiffusionForecaster`` bundles graph-diffusion drafting, denoiser
training, and ensemble sampling behind the familiar ``fit`` / ``predict``
shape, with two small transformers for the preprocessing steps. The
estimator treats everything passed to ``fit`` as training data; split
handling for honest evaluation lives in the pipeline layer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import ChannelStats, rolling_mean_fill
from .denoiser import FsdConfig
from .errors import ContractViolation, DegenerateInputError
from .metrics import mae
from .numerics import DTYPE
from .ode import OdeConfig
from .schedule import accelerated_step, linear_schedule
from .training import TrainSettings, build_training_set, fit_denoiser, forecast_window_batch
from .validation import check_graph, check_positive_int, check_series, check_windows


def persistence_forecast(history: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed frame across the horizon.

    ``history`` is (H, N, C) or (W, H, N, C); the result appends a horizon
    axis of the same layout.
    """
    arr = np.asarray(history, dtype=DTYPE)
    last = arr[..., -1:, :, :]
    reps = [1] * arr.ndim
    reps[-3] = horizon
    return np.tile(last, reps)


class RollingMeanImputer(BaseEstimator, TransformerMixin):
    """Fill NaN gaps with a centered rolling mean over nearby samples.

    ``window`` counts samples on either side of the gap. Gaps whose whole
    window is missing fall back to per-channel means learned in ``fit``.
    """

    def __init__(self, window: int = 12):
        self.window = window

    def fit(self, X, y=None):
        arr = check_series(X, "X", allow_nan=True)
        means = np.empty(arr.shape[2], dtype=DTYPE)
        for c in range(arr.shape[2]):
            col = arr[:, :, c]
            obs = col[~np.isnan(col)]
            if obs.size == 0:
                raise DegenerateInputError(
                    f"channel index {c} has no observed value; cannot learn a fallback"
                )
            means[c] = obs.mean()
        self.channel_means_ = means
        self.n_channels_ = arr.shape[2]
        return self

    def transform(self, X):
        if not hasattr(self, "channel_means_"):
            raise ContractViolation("RollingMeanImputer is not fitted")
        arr = check_series(X, "X", allow_nan=True)
        if arr.shape[2] != self.n_channels_:
            raise ContractViolation(
                f"X has {arr.shape[2]} channels, imputer was fitted with {self.n_channels_}"
            )
        half = check_positive_int(self.window, "window")
        filled = rolling_mean_fill(arr, half)
        still = np.isnan(filled)
        if still.any():
            for c in range(arr.shape[2]):
                ch = still[:, :, c]
                if ch.any():
                    filled[:, :, c][ch] = self.channel_means_[c]
        return filled


class TrainStatsNormalizer(BaseEstimator, TransformerMixin):
    """Per-channel standardization with stats frozen at fit time."""

    def __init__(self):
        pass

    def fit(self, X, y=None):
        arr = check_series(X, "X")
        mean = arr.mean(axis=(0, 1))
        std = arr.std(axis=(0, 1))
        if np.any(std < 1e-8):
            bad = int(np.argmin(std))
            raise DegenerateInputError(
                f"channel index {bad} is constant in the fit data (std={std[bad]:.3g})"
            )
        self.stats_ = ChannelStats(mean=mean, std=std)
        return self

    def transform(self, X):
        if not hasattr(self, "stats_"):
            raise ContractViolation("TrainStatsNormalizer is not fitted")
        return self.stats_.apply(check_series(X, "X"))

    def inverse_transform(self, X):
        if not hasattr(self, "stats_"):
            raise ContractViolation("TrainStatsNormalizer is not fitted")
        return self.stats_.invert(check_series(X, "X"))


class OdeDiffusionForecaster(BaseEstimator):
    """Probabilistic graph time-series forecaster.

    Drafts each future window by running heat diffusion over the sensor
    graph from the last observed frame, then trains a spectral denoiser to
    refine that draft with a residual-aware diffusion model. ``predict``
    returns the ensemble mean; ``sample`` exposes the full ensemble.

    Data passed to ``fit`` must already be complete and normalized (see
    ``RollingMeanImputer`` and ``TrainStatsNormalizer``); the estimator
    keeps no scaling state of its own.
    """

    def __init__(
        self,
        graph=None,
        history: int = 12,
        horizon: int = 12,
        steps: int = 200,
        beta_start: float = 1e-4,
        beta_end: float = 0.2,
        ode_k: float = 0.1,
        ode_rtol: float = 1e-6,
        ode_atol: float = 1e-8,
        ode_max_steps: int = 10_000,
        blocks: int = 8,
        hidden: int = 64,
        heads: int = 8,
        time_embed: int = 16,
        node_embed: int = 16,
        channel_embed: int = 16,
        step_embed: int = 128,
        spectral_mix: bool = True,
        epochs: int = 200,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        loss_future_only: bool = False,
        ensemble: int = 8,
        accelerated: bool = True,
        deterministic: bool = False,
        clamp_history: bool = False,
        use_ode_prior: bool = True,
        seed: int = 0,
    ):
        self.graph = graph
        self.history = history
        self.horizon = horizon
        self.steps = steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.ode_k = ode_k
        self.ode_rtol = ode_rtol
        self.ode_atol = ode_atol
        self.ode_max_steps = ode_max_steps
        self.blocks = blocks
        self.hidden = hidden
        self.heads = heads
        self.time_embed = time_embed
        self.node_embed = node_embed
        self.channel_embed = channel_embed
        self.step_embed = step_embed
        self.spectral_mix = spectral_mix
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss_future_only = loss_future_only
        self.ensemble = ensemble
        self.accelerated = accelerated
        self.deterministic = deterministic
        self.clamp_history = clamp_history
        self.use_ode_prior = use_ode_prior
        self.seed = seed

    def _ode_config(self) -> OdeConfig:
        return OdeConfig(
            k=self.ode_k,
            rtol=self.ode_rtol,
            atol=self.ode_atol,
            max_steps=self.ode_max_steps,
        )

    def fit(self, X, y=None):
        """Train the denoiser on every sliding window of the series X.

        X is a complete (T, N, C) array, already normalized.
        """
        arr = check_series(X, "X")
        history = check_positive_int(self.history, "history")
        horizon = check_positive_int(self.horizon, "horizon")
        window = history + horizon
        if arr.shape[0] < window:
            raise ContractViolation(
                f"series length {arr.shape[0]} is shorter than one window "
                f"(history+horizon = {window})"
            )
        graph = check_graph(self.graph, arr.shape[1])

        starts = range(arr.shape[0] - window + 1)
        hist = np.stack([arr[s : s + history] for s in starts])
        fut = np.stack([arr[s + history : s + window] for s in starts])

        schedule = linear_schedule(self.steps, self.beta_end, self.beta_start)
        tset = build_training_set(
            hist, fut, graph, self._ode_config(), use_prior=self.use_ode_prior
        )
        config = FsdConfig(
            window=window,
            n_nodes=arr.shape[1],
            n_channels=arr.shape[2],
            blocks=self.blocks,
            hidden=self.hidden,
            heads=self.heads,
            time_embed=self.time_embed,
            node_embed=self.node_embed,
            channel_embed=self.channel_embed,
            step_embed=self.step_embed,
            spectral_mix=self.spectral_mix,
        )
        settings = TrainSettings(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            loss_future_only=self.loss_future_only,
        )
        model, losses = fit_denoiser(tset, config, schedule, graph, self.seed, settings)
        self.graph_ = graph
        self.schedule_ = schedule
        self.model_ = model
        self.config_ = config
        self.losses_ = losses
        self.n_windows_ = hist.shape[0]
        self.accelerated_step_ = accelerated_step(schedule)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractViolation("forecaster is not fitted; call fit first")

    def sample(self, X, n_samples: int | None = None):
        """Draw forecast ensembles for history windows X.

        X is (history, N, C) or (W, history, N, C); the result is
        (n_samples, horizon, N, C), batched with a leading window axis when
        the input was batched.
        """
        self._check_fitted()
        hist, single = check_windows(X, self.history, "X")
        if hist.shape[2] != self.graph_.n_nodes or hist.shape[3] != self.config_.n_channels:
            raise ContractViolation(
                f"window shape {hist.shape[1:]} does not match the fitted layout "
                f"({self.history}, {self.graph_.n_nodes}, {self.config_.n_channels})"
            )
        k = self.ensemble if n_samples is None else check_positive_int(n_samples, "n_samples")
        samples, start_step, invocations = forecast_window_batch(
            self.model_,
            hist,
            self.graph_,
            self._ode_config(),
            self.schedule_,
            self.horizon,
            k,
            self.seed,
            use_prior=self.use_ode_prior,
            accelerated=self.accelerated,
            deterministic=self.deterministic,
            clamp_history=self.clamp_history,
        )
        self.last_start_step_ = start_step
        self.last_invocations_ = invocations
        return samples[0] if single else samples

    def predict(self, X):
        """Ensemble-mean forecast for history windows X."""
        samples = self.sample(X)
        return samples.mean(axis=-4)

    def score(self, X, y):
        """Negative mean absolute error of the ensemble-mean forecast."""
        pred = self.predict(X)
        truth = np.asarray(y, dtype=DTYPE)
        if truth.shape != pred.shape:
            raise ContractViolation(
                f"y has shape {truth.shape}, expected {pred.shape}"
            )
        return -mae(pred, truth)
