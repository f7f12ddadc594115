"""Run orchestration behind the CLI subcommands.

Each command resolves the configuration into data, graph, and model objects,
does its work, and writes artifacts under a fresh run directory together
with the resolved config. Numeric artifact content is a pure function of
(config, seed): file names may carry a launch timestamp, file contents never
do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .checkpoint import restore_model, restore_optimizer, save_checkpoint
from .config import RunConfig
from .data import (
    ChannelStats,
    SeriesStore,
    Window,
    WindowSpec,
    compute_channel_stats,
    impute_rolling_mean,
    load_series_csv,
    normalize_store,
    save_series_csv,
    stack_windows,
    synth_generate,
    windows,
)
from .denoiser import FactoredSpectralDenoiser, FsdConfig
from .errors import ConfigError
from .graph import (
    SensorGraph,
    load_coordinates_csv,
    load_matrix_csv,
    save_coordinates_csv,
    save_matrix_csv,
)
from .metrics import ScoreReport, score_windows
from .numerics import RngStream, STREAM_PARAMS, STREAM_SYNTH
from .ode import OdeConfig, forecast_window
from .schedule import (
    NoiseSchedule,
    approx_accelerated_step,
    linear_schedule,
    step_table,
)
from .training import (
    TrainSettings,
    build_training_set,
    forecast_window_batch,
    ode_draft_batch,
    train_loop,
)

_FMT = "%.17g"


def _fmt(x) -> str:
    return _FMT % float(x)


def make_run_dir(config: RunConfig, command: str) -> Path:
    """Create a fresh directory for this run's artifacts."""
    base = Path(config.output.directory)
    base.mkdir(parents=True, exist_ok=True)
    if config.output.run_name:
        path = base / config.output.run_name
        try:
            path.mkdir()
        except FileExistsError:
            raise ConfigError(
                f"output.run_name: run directory {path} already exists"
            ) from None
        return path
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    suffix = 0
    while True:
        name = f"{command}-{stamp}" + (f"-{suffix}" if suffix else "")
        path = base / name
        try:
            path.mkdir()
            return path
        except FileExistsError:
            suffix += 1


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_config(run_dir: Path, config: RunConfig) -> None:
    _write(run_dir / "resolved_config.json", config.to_json())


@dataclass
class PreparedData:
    """Everything the modeling commands share: the imputed raw series, its
    normalized twin, the scaling stats, the graph, and the window layout."""

    raw: SeriesStore
    store: SeriesStore
    stats: ChannelStats
    graph: SensorGraph
    coords: np.ndarray | None
    spec: WindowSpec


def _graph_from_files(config: RunConfig, node_ids=None) -> tuple[SensorGraph, np.ndarray | None]:
    g = config.graph
    if g.source == "coordinates":
        ids, coords, kind = load_coordinates_csv(g.coordinates_csv)
        if kind == "latlon" and g.metric != "greatcircle":
            raise ConfigError(
                "graph.metric: coordinates file has lat/lon columns; set metric to 'greatcircle'"
            )
        if kind == "xy" and g.metric != "euclidean":
            raise ConfigError(
                "graph.metric: coordinates file has x/y columns; set metric to 'euclidean'"
            )
        graph = SensorGraph.from_coordinates(
            coords,
            metric=g.metric,
            kernel_width=g.kernel_width,
            threshold=g.threshold,
            node_ids=ids,
        )
        return graph, coords
    if g.source == "adjacency":
        matrix = load_matrix_csv(g.adjacency_csv)
        return SensorGraph.from_adjacency(matrix, node_ids=node_ids), None
    raise ConfigError(f"graph.source: cannot build a graph from {g.source!r} here")


def _spec(config: RunConfig) -> WindowSpec:
    d = config.data
    test = 1.0 - d.train_fraction - d.val_fraction
    return WindowSpec(
        history=d.history,
        horizon=d.horizon,
        stride=d.stride,
        ratios=(d.train_fraction, d.val_fraction, test),
    )


def generate_synth(config: RunConfig) -> tuple[SeriesStore, SensorGraph, np.ndarray | None]:
    """Build the synthetic benchmark series named by the config."""
    sy = config.synth
    stream = RngStream(config.seed, STREAM_SYNTH)
    graph = None
    coords = None
    if config.graph.source != "synth":
        graph, coords = _graph_from_files(config)
    return synth_generate(
        sy.nodes,
        sy.channels,
        sy.length,
        stream,
        k_true=sy.k_true,
        noise_sigma=sy.noise_sigma,
        season_amps=tuple(sy.season_amps),
        season_periods=tuple(sy.season_periods),
        phase_jitter=sy.phase_jitter,
        graph=graph,
        coords=coords,
    )


def load_raw_data(config: RunConfig) -> tuple[SeriesStore, SensorGraph, np.ndarray | None]:
    """Load or generate the raw series plus its sensor graph."""
    if config.data.source == "synth":
        return generate_synth(config)
    store = load_series_csv(config.data.series_csv)
    graph, coords = _graph_from_files(config, node_ids=store.node_ids)
    if graph.n_nodes != store.n_nodes:
        raise ConfigError(
            f"graph has {graph.n_nodes} nodes, series has {store.n_nodes}"
        )
    if tuple(graph.node_ids) != tuple(store.node_ids):
        raise ConfigError(
            "graph and series disagree on node identity or order; "
            "align the node_id columns of the two files"
        )
    return store, graph, coords


def prepare(config: RunConfig) -> PreparedData:
    """Shared data path: load or synthesize, impute, normalize."""
    store, graph, coords = load_raw_data(config)
    spec = _spec(config)
    raw = impute_rolling_mean(store, spec, config.data.impute_window_hours)
    stats = compute_channel_stats(raw, spec)
    norm = normalize_store(raw, stats)
    return PreparedData(raw=raw, store=norm, stats=stats, graph=graph, coords=coords, spec=spec)


def _ode_config(config: RunConfig) -> OdeConfig:
    o = config.ode
    return OdeConfig(k=o.k, rtol=o.rtol, atol=o.atol, max_steps=o.max_steps)


def _fsd_config(config: RunConfig, prep: PreparedData) -> FsdConfig:
    m = config.model
    return FsdConfig(
        window=prep.spec.window,
        n_nodes=prep.graph.n_nodes,
        n_channels=prep.store.n_channels,
        blocks=m.blocks,
        hidden=m.hidden,
        heads=m.heads,
        time_embed=m.time_embed,
        node_embed=m.node_embed,
        channel_embed=m.channel_embed,
        step_embed=m.step_embed,
        spectral_mix=m.spectral_mix,
    )


def _split_windows(prep: PreparedData, split: str, max_windows: int) -> list[Window]:
    wins = windows(prep.store, prep.spec, split)
    if not wins:
        raise ConfigError(
            f"the {split} split is too short for a single "
            f"{prep.spec.history}+{prep.spec.horizon} window"
        )
    if max_windows and len(wins) > max_windows:
        keep = np.unique(np.linspace(0, len(wins) - 1, max_windows).round().astype(int))
        wins = [wins[i] for i in keep]
    return wins


def cmd_train(config: RunConfig) -> Path:
    """Train the denoiser on the train split; write checkpoint and loss log."""
    prep = prepare(config)
    wins = _split_windows(prep, "train", 0)
    hist, fut = stack_windows(wins)
    tset = build_training_set(
        hist, fut, prep.graph, _ode_config(config), use_prior=config.sampling.use_ode_prior
    )
    t = config.training
    settings = TrainSettings(
        epochs=t.epochs,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        loss_future_only=t.loss_future_only,
    )
    sc = config.schedule
    if t.resume_from:
        model, schedule, meta = restore_model(t.resume_from, prep.graph)
        want = _fsd_config(config, prep)
        if model.config.to_dict() != want.to_dict():
            raise ConfigError(
                "training.resume_from: checkpoint architecture does not match the model section"
            )
        if schedule.config_dict() != {
            "steps": sc.steps,
            "beta_start": sc.beta_start,
            "beta_end": sc.beta_end,
        }:
            raise ConfigError(
                "training.resume_from: checkpoint schedule does not match the schedule section"
            )
        first_epoch = int(meta.get("extra", {}).get("trained_epochs", 0)) + 1
        if settings.epochs < first_epoch:
            raise ConfigError(
                f"training.epochs: checkpoint already trained {first_epoch - 1} epochs; "
                "raise epochs to resume"
            )
        optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
        restore_optimizer(t.resume_from, model, optimizer)
    else:
        schedule = linear_schedule(sc.steps, sc.beta_end, sc.beta_start)
        model = FactoredSpectralDenoiser(
            _fsd_config(config, prep), prep.graph, RngStream(config.seed, STREAM_PARAMS)
        )
        optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
        first_epoch = 1
    losses = train_loop(
        model, optimizer, schedule, tset, config.seed, settings, first_epoch, settings.epochs
    )

    run_dir = make_run_dir(config, "train")
    _write_config(run_dir, config)
    rows = ["epoch,loss"]
    rows += [f"{e},{_fmt(v)}" for e, v in enumerate(losses, start=first_epoch)]
    _write(run_dir / "loss.csv", "\n".join(rows) + "\n")
    save_checkpoint(
        run_dir / "model.ckpt",
        model,
        schedule,
        prep.graph,
        extra={
            "trained_epochs": settings.epochs,
            "n_train_windows": len(wins),
            "seed": config.seed,
            "use_ode_prior": config.sampling.use_ode_prior,
        },
        optimizer=optimizer,
    )
    return run_dir


def _require_checkpoint(config: RunConfig) -> str:
    path = config.sampling.checkpoint
    if not path:
        raise ConfigError("sampling.checkpoint: a trained checkpoint path is required")
    return path


def _ensemble_for_split(
    config: RunConfig, prep: PreparedData, model: FactoredSpectralDenoiser, schedule: NoiseSchedule
):
    """Forecast ensembles for the configured split, denormalized."""
    sa = config.sampling
    wins = _split_windows(prep, sa.split, sa.max_windows)
    hist, fut = stack_windows(wins)
    samples, start_step, invocations = forecast_window_batch(
        model,
        hist,
        prep.graph,
        _ode_config(config),
        schedule,
        prep.spec.horizon,
        sa.ensemble,
        config.seed,
        use_prior=sa.use_ode_prior,
        accelerated=sa.accelerated,
        deterministic=sa.deterministic,
        clamp_history=sa.clamp_history,
    )
    return wins, prep.stats.invert(fut), prep.stats.invert(samples), start_step, invocations


def _ensemble_csv(wins: list[Window], samples: np.ndarray, node_ids, channels) -> str:
    lines = ["window_start,sample,step,node_id,channel,value"]
    for wi, w in enumerate(wins):
        arr = samples[wi]
        for k in range(arr.shape[0]):
            for h in range(arr.shape[1]):
                for n_i, node in enumerate(node_ids):
                    for c_i, ch in enumerate(channels):
                        lines.append(
                            f"{w.start},{k},{h + 1},{node},{ch},{_fmt(arr[k, h, n_i, c_i])}"
                        )
    return "\n".join(lines) + "\n"


def _mean_csv(wins: list[Window], mean: np.ndarray, node_ids, channels) -> str:
    lines = ["window_start,step,node_id,channel,value"]
    for wi, w in enumerate(wins):
        for h in range(mean.shape[1]):
            for n_i, node in enumerate(node_ids):
                for c_i, ch in enumerate(channels):
                    lines.append(f"{w.start},{h + 1},{node},{ch},{_fmt(mean[wi, h, n_i, c_i])}")
    return "\n".join(lines) + "\n"


def _sampling_info(config: RunConfig, wins, start_step, invocations) -> str:
    info = {
        "accelerated": config.sampling.accelerated,
        "deterministic": config.sampling.deterministic,
        "ensemble": config.sampling.ensemble,
        "start_step": int(start_step),
        "denoiser_invocations": int(invocations),
        "n_windows": len(wins),
        "window_starts": [int(w.start) for w in wins],
        "split": config.sampling.split,
    }
    return json.dumps(info, sort_keys=True, indent=2) + "\n"


def cmd_sample(config: RunConfig) -> Path:
    """Draw forecast ensembles with a trained model; write samples and mean."""
    prep = prepare(config)
    model, schedule, _ = restore_model(_require_checkpoint(config), prep.graph)
    wins, _, samples, start_step, invocations = _ensemble_for_split(config, prep, model, schedule)
    mean = samples.mean(axis=1)

    run_dir = make_run_dir(config, "sample")
    _write_config(run_dir, config)
    ids, chans = prep.store.node_ids, prep.store.channels
    _write(run_dir / "samples.csv", _ensemble_csv(wins, samples, ids, chans))
    _write(run_dir / "mean.csv", _mean_csv(wins, mean, ids, chans))
    _write(run_dir / "sampling_info.json", _sampling_info(config, wins, start_step, invocations))
    return run_dir


def cmd_evaluate(
    config: RunConfig, baseline: str | None = None, emit_plots: bool = False
) -> tuple[Path, ScoreReport]:
    """Score forecasts on a held-out split.

    Default scores the trained model's ensembles; ``baseline`` swaps in the
    training-free forecasters ('ode' or 'persistence'), which produce point
    forecasts only.
    """
    prep = prepare(config)
    sa = config.sampling
    extra_info = None
    if baseline is None:
        model, schedule, _ = restore_model(_require_checkpoint(config), prep.graph)
        wins, truth, samples, start_step, invocations = _ensemble_for_split(
            config, prep, model, schedule
        )
        mean = samples.mean(axis=1)
        report = score_windows(mean, truth, samples)
        extra_info = (wins, start_step, invocations)
    elif baseline in ("ode", "persistence"):
        wins = _split_windows(prep, sa.split, sa.max_windows)
        hist, fut = stack_windows(wins)
        if baseline == "ode":
            pred = ode_draft_batch(hist, prep.graph, _ode_config(config), prep.spec.horizon)
        else:
            pred = np.repeat(hist[:, -1:], prep.spec.horizon, axis=1)
        report = score_windows(prep.stats.invert(pred), prep.stats.invert(fut))
    else:
        raise ConfigError(f"--baseline: unknown baseline {baseline!r}")

    run_dir = make_run_dir(config, "evaluate")
    _write_config(run_dir, config)
    payload = dict(report.to_dict())
    payload["split"] = sa.split
    payload["baseline"] = baseline
    _write(run_dir / "report.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _write(run_dir / "report.csv", report.to_csv())
    if extra_info is not None:
        wins, start_step, invocations = extra_info
        _write(
            run_dir / "sampling_info.json", _sampling_info(config, wins, start_step, invocations)
        )
    if emit_plots:
        _write(run_dir / "per_horizon.csv", report.horizon_csv())
    return run_dir, report


def cmd_schedule(config: RunConfig) -> tuple[Path, str]:
    """Tabulate exact accelerated starting steps and the closed-form
    approximation error over the configured grid."""
    sc = config.schedule
    betas = list(sc.beta_grid)
    grid = list(sc.steps_grid)
    table = step_table(betas, grid, beta_start=sc.beta_start)

    head = "steps," + ",".join(f"beta_end={b:g}" for b in betas)
    rows = [head]
    for j, s in enumerate(grid):
        rows.append(f"{s}," + ",".join(str(int(table[i, j])) for i in range(len(betas))))
    table_csv = "\n".join(rows) + "\n"

    err_rows = ["steps,beta_end,exact,approx,rel_error"]
    for i, b in enumerate(betas):
        for j, s in enumerate(grid):
            exact = int(table[i, j])
            approx = approx_accelerated_step(s, b)
            rel = abs(approx - exact) / exact
            err_rows.append(f"{s},{b:g},{exact},{_fmt(approx)},{_fmt(rel)}")
    err_csv = "\n".join(err_rows) + "\n"

    run_dir = make_run_dir(config, "schedule")
    _write_config(run_dir, config)
    _write(run_dir / "schedule_table.csv", table_csv)
    _write(run_dir / "approx_error.csv", err_csv)
    return run_dir, table_csv


def cmd_synth(config: RunConfig) -> Path:
    """Generate the synthetic benchmark and write series, graph, and
    provenance files."""
    if config.data.source != "synth":
        raise ConfigError("data.source: the synth command needs data.source = 'synth'")
    store, graph, coords = generate_synth(config)
    run_dir = make_run_dir(config, "synth")
    _write_config(run_dir, config)
    save_series_csv(store, run_dir / "series.csv", fmt=config.synth.format)
    save_matrix_csv(run_dir / "adjacency.csv", graph.adjacency)
    if coords is not None:
        save_coordinates_csv(run_dir / "coordinates.csv", store.node_ids, coords, kind="xy")
    meta = dict(store.meta)
    meta["graph_hash"] = graph.hash()
    meta["n_nodes"] = store.n_nodes
    meta["n_channels"] = store.n_channels
    meta["length"] = store.length
    _write(run_dir / "meta.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return run_dir


def cmd_forecast_ode(config: RunConfig) -> Path:
    """Training-free forecast: diffuse the last observed frame forward and
    write the horizon as CSV."""
    store, graph, _ = load_raw_data(config)
    spec = _spec(config)
    raw = impute_rolling_mean(store, spec, config.data.impute_window_hours)
    if raw.length < spec.history:
        raise ConfigError(
            f"series has {raw.length} frames, fewer than data.history = {spec.history}"
        )
    history = raw.values[-spec.history :]
    pred = forecast_window(history, graph, _ode_config(config), spec.horizon)

    run_dir = make_run_dir(config, "forecast-ode")
    _write_config(run_dir, config)
    lines = ["step,node_id,channel,value"]
    for h in range(pred.shape[0]):
        for n_i, node in enumerate(store.node_ids):
            for c_i, ch in enumerate(store.channels):
                lines.append(f"{h + 1},{node},{ch},{_fmt(pred[h, n_i, c_i])}")
    _write(run_dir / "forecast.csv", "\n".join(lines) + "\n")
    return run_dir
