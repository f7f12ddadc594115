"""Training and batched-forecast plumbing that ties the prior, the process
math, and the denoiser together."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import FactoredSpectralDenoiser, FsdConfig
from .diffusion import (
    Conditioning,
    forward_sample,
    init_inference_state,
    make_conditioning,
    residual_field,
    reverse_step,
    training_target,
)
from .errors import ContractViolation, NumericFailure
from .graph import SensorGraph
from .numerics import (
    RngStream,
    STREAM_PARAMS,
    STREAM_SAMPLE_BASE,
    STREAM_TRAIN_EPOCH_BASE,
    as_tensor,
)
from .ode import OdeConfig, forecast_window
from .schedule import NoiseSchedule, accelerated_step


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    loss_future_only: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")


def ode_draft_batch(
    histories: np.ndarray, graph: SensorGraph, ode_config: OdeConfig, horizon: int
) -> np.ndarray:
    """Prior forecasts for a stack of history windows: (W, H, N, C) in,
    (W, horizon, N, C) out."""
    if histories.ndim != 4:
        raise ContractViolation(f"expected (W, H, N, C) histories, got {histories.shape}")
    out = np.empty(
        (histories.shape[0], horizon, histories.shape[2], histories.shape[3]),
        dtype=histories.dtype,
    )
    for i in range(histories.shape[0]):
        out[i] = forecast_window(histories[i], graph, ode_config, horizon)
    return out


@dataclass
class TrainingSet:
    """Tensors the train loop consumes; everything precomputed once."""

    x0: torch.Tensor
    cond: Conditioning
    res: torch.Tensor

    @property
    def n_windows(self) -> int:
        return self.x0.shape[0]


def build_training_set(
    histories: np.ndarray,
    futures: np.ndarray,
    graph: SensorGraph,
    ode_config: OdeConfig,
    use_prior: bool = True,
) -> TrainingSet:
    """Assemble clean windows, conditioning, and residuals for training.

    With the prior enabled the conditioning future is the ODE draft and the
    residual is its error; without it both are zeros (plain conditional
    denoising)."""
    horizon = futures.shape[1]
    draft = ode_draft_batch(histories, graph, ode_config, horizon) if use_prior else None
    hist_t = as_tensor(histories)
    cond = make_conditioning(
        hist_t,
        as_tensor(draft) if draft is not None else None,
        horizon,
        use_prior=use_prior,
    )
    x0 = torch.cat([hist_t, as_tensor(futures)], dim=1)
    res = residual_field(cond, x0)
    return TrainingSet(x0=x0, cond=cond, res=res)


def train_epoch(
    model: FactoredSpectralDenoiser,
    optimizer: torch.optim.Optimizer,
    schedule: NoiseSchedule,
    tset: TrainingSet,
    stream: RngStream,
    settings: TrainSettings,
    epoch: int = 0,
) -> float:
    """One pass over the training windows; returns the mean loss.

    Batch order, step draws, and noise draws all come from ``stream``, so an
    epoch is a pure function of (parameters, stream state). A non-finite loss
    aborts with context instead of letting the run drift on."""
    w = tset.n_windows
    order = stream.permutation(w)
    future_mask = tset.cond.future_mask
    total = 0.0
    seen = 0
    for start in range(0, w, settings.batch_size):
        idx = torch.from_numpy(np.ascontiguousarray(order[start : start + settings.batch_size]))
        x0 = tset.x0[idx]
        x_a = tset.cond.x_a[idx]
        res = tset.res[idx]
        mask = tset.cond.observed_mask[idx]
        s = torch.from_numpy(stream.integers(1, schedule.steps + 1, (len(idx),)))
        eps = stream.gaussian_tensor(tuple(x0.shape))
        x_s = forward_sample(x0, res, schedule, s, eps)
        target = training_target(eps, res, schedule, s)
        pred = model(x_s, x_a, s, mask)
        if settings.loss_future_only:
            fmask = future_mask[idx]
            loss = (((pred - target) * fmask) ** 2).sum() / fmask.sum()
        else:
            loss = ((pred - target) ** 2).mean()
        if not torch.isfinite(loss):
            raise NumericFailure(
                f"non-finite training loss at epoch {epoch}, batch starting {start} "
                f"(steps {s.min().item()}..{s.max().item()}); "
                "check the learning rate and input scaling"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += loss.detach().item() * len(idx)
        seen += len(idx)
    return total / seen


def train_loop(
    model: FactoredSpectralDenoiser,
    optimizer: torch.optim.Optimizer,
    schedule: NoiseSchedule,
    tset: TrainingSet,
    seed: int,
    settings: TrainSettings,
    first_epoch: int,
    last_epoch: int,
) -> list[float]:
    """Run epochs ``first_epoch..last_epoch`` (1-based, inclusive).

    Each epoch draws from its own stream keyed by the epoch number, so a run
    resumed from a checkpoint consumes exactly the randomness the straight
    run would have.
    """
    losses = []
    for epoch in range(first_epoch, last_epoch + 1):
        stream = RngStream(seed, STREAM_TRAIN_EPOCH_BASE + epoch)
        losses.append(train_epoch(model, optimizer, schedule, tset, stream, settings, epoch))
    return losses


def fit_denoiser(
    tset: TrainingSet,
    config: FsdConfig,
    schedule: NoiseSchedule,
    graph: SensorGraph,
    seed: int,
    settings: TrainSettings,
) -> tuple[FactoredSpectralDenoiser, list[float]]:
    """Initialize and train a denoiser; returns it with per-epoch losses."""
    model = FactoredSpectralDenoiser(config, graph, RngStream(seed, STREAM_PARAMS))
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
    losses = train_loop(
        model, optimizer, schedule, tset, seed, settings, 1, settings.epochs
    )
    return model, losses


def forecast_window_batch(
    model: FactoredSpectralDenoiser,
    histories: np.ndarray,
    graph: SensorGraph,
    ode_config: OdeConfig,
    schedule: NoiseSchedule,
    horizon: int,
    n_samples: int,
    seed: int,
    use_prior: bool = True,
    accelerated: bool = True,
    deterministic: bool = False,
    clamp_history: bool = False,
) -> tuple[np.ndarray, int, int]:
    """Ensemble forecasts for a stack of windows at once.

    Returns ``(samples, start_step, invocations)`` where samples has shape
    (W, K, horizon, N, C). Trajectory ``k`` across all windows shares the
    substream ``STREAM_SAMPLE_BASE + k``; each reverse step runs the denoiser
    once over the whole window batch, and the invocation counter advances by
    one per window per step.
    """
    draft = ode_draft_batch(histories, graph, ode_config, horizon) if use_prior else None
    cond = make_conditioning(
        as_tensor(histories),
        as_tensor(draft) if draft is not None else None,
        horizon,
        use_prior=use_prior,
    )
    start = accelerated_step(schedule) if accelerated else schedule.steps
    shape = tuple(cond.x_a.shape)
    before = model.invocations
    base = RngStream(seed, STREAM_SAMPLE_BASE)
    outs = []
    with torch.no_grad():
        for k in range(n_samples):
            stream = base.substream(k)
            x = init_inference_state(cond.x_a, schedule, start, stream.gaussian_tensor(shape))
            for s in range(start, 0, -1):
                eps_tilde_hat = model(x, cond.x_a, s, cond.observed_mask)
                noise = None
                if not deterministic and s > 1:
                    noise = stream.gaussian_tensor(shape)
                x = reverse_step(x, s, eps_tilde_hat, cond, schedule, noise, deterministic)
                if clamp_history and s > 1:
                    x = cond.observed_mask * cond.x_a + cond.future_mask * x
            if not torch.isfinite(x).all():
                raise NumericFailure("reverse chain produced non-finite forecasts")
            outs.append(x[:, cond.history_len :].numpy())
    samples = np.stack(outs, axis=1)  # (W, K, horizon, N, C)
    return samples, start, model.invocations - before
