"""Run configuration: one JSON document, strictly validated.

The document has one object per concern (data, synth, graph, schedule, ode,
model, training, sampling, output) plus a top-level seed. Unknown keys are
rejected with the offending path in the message, values are type-checked
against the section dataclasses, and ``--set section.key=value`` overrides
are applied before validation so they obey the same rules.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class DataSection:
    source: str = "synth"
    series_csv: str | None = None
    history: int = 12
    horizon: int = 12
    stride: int = 1
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    impute_window_hours: float = 24.0


@dataclass
class SynthSection:
    nodes: int = 12
    channels: int = 2
    length: int = 2000
    k_true: float = 0.1
    noise_sigma: float = 0.15
    season_amps: list[float] = field(default_factory=lambda: [1.0, 0.4])
    season_periods: list[float] = field(default_factory=lambda: [12.0, 24.0])
    phase_jitter: float = 0.3
    format: str = "long"


@dataclass
class GraphSection:
    source: str = "synth"
    coordinates_csv: str | None = None
    adjacency_csv: str | None = None
    metric: str = "euclidean"
    kernel_width: float | None = None
    threshold: float = 0.1


@dataclass
class ScheduleSection:
    steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.2
    steps_grid: list[int] = field(default_factory=lambda: [50, 100, 200, 300, 400, 500])
    beta_grid: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])


@dataclass
class OdeSection:
    k: float = 0.1
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000


@dataclass
class ModelSection:
    blocks: int = 8
    hidden: int = 64
    heads: int = 8
    time_embed: int = 16
    node_embed: int = 16
    channel_embed: int = 16
    step_embed: int = 128
    spectral_mix: bool = True


@dataclass
class TrainingSection:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    loss_future_only: bool = False
    resume_from: str | None = None


@dataclass
class SamplingSection:
    ensemble: int = 8
    accelerated: bool = True
    deterministic: bool = False
    clamp_history: bool = False
    use_ode_prior: bool = True
    split: str = "test"
    max_windows: int = 8
    checkpoint: str | None = None


@dataclass
class OutputSection:
    directory: str = "runs"
    run_name: str | None = None


_SECTIONS: dict[str, type] = {
    "data": DataSection,
    "synth": SynthSection,
    "graph": GraphSection,
    "schedule": ScheduleSection,
    "ode": OdeSection,
    "model": ModelSection,
    "training": TrainingSection,
    "sampling": SamplingSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    graph: GraphSection = field(default_factory=GraphSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    ode: OdeSection = field(default_factory=OdeSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        (item_type,) = typing.get_args(hint) or (float,)
        return [_coerce(v, item_type, f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _build_section(cls, raw, section: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config key '{section}.{unknown[0]}'")
    kwargs = {
        key: _coerce(value, hints[key], f"{section}.{key}") for key, value in raw.items()
    }
    return cls(**kwargs)


def _apply_overrides(raw: dict, overrides: typing.Sequence[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, text = item.partition("=")
        key = key.strip()
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        parts = key.split(".")
        if len(parts) == 1:
            raw[parts[0]] = value
        elif len(parts) == 2:
            raw.setdefault(parts[0], {})
            if not isinstance(raw[parts[0]], dict):
                raise ConfigError(f"--set {key}: '{parts[0]}' is not a section")
            raw[parts[0]][parts[1]] = value
        else:
            raise ConfigError(f"--set {key}: keys have at most two levels")
    return raw


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _validate(cfg: RunConfig) -> RunConfig:
    _check(0 <= cfg.seed < 2**64, "seed: must fit in an unsigned 64-bit integer")
    d = cfg.data
    _check(d.source in ("synth", "csv"), "data.source: must be 'synth' or 'csv'")
    if d.source == "csv":
        _check(bool(d.series_csv), "data.series_csv: required when data.source is 'csv'")
    _check(d.history >= 1, "data.history: must be >= 1")
    _check(d.horizon >= 1, "data.horizon: must be >= 1")
    _check(d.stride >= 1, "data.stride: must be >= 1")
    _check(0 < d.train_fraction < 1, "data.train_fraction: must be in (0, 1)")
    _check(0 < d.val_fraction < 1, "data.val_fraction: must be in (0, 1)")
    _check(
        d.train_fraction + d.val_fraction < 1,
        "data: train_fraction + val_fraction must leave room for a test split",
    )
    _check(d.impute_window_hours > 0, "data.impute_window_hours: must be positive")

    sy = cfg.synth
    _check(sy.nodes >= 2, "synth.nodes: must be >= 2")
    _check(sy.channels >= 1, "synth.channels: must be >= 1")
    _check(sy.length >= 2, "synth.length: must be >= 2")
    _check(sy.k_true >= 0, "synth.k_true: must be >= 0")
    _check(sy.noise_sigma >= 0, "synth.noise_sigma: must be >= 0")
    _check(
        len(sy.season_amps) == len(sy.season_periods),
        "synth: season_amps and season_periods must have the same length",
    )
    _check(all(p > 0 for p in sy.season_periods), "synth.season_periods: must be positive")
    _check(sy.format in ("long", "wide"), "synth.format: must be 'long' or 'wide'")

    g = cfg.graph
    _check(
        g.source in ("synth", "coordinates", "adjacency"),
        "graph.source: must be 'synth', 'coordinates', or 'adjacency'",
    )
    if g.source == "coordinates":
        _check(bool(g.coordinates_csv), "graph.coordinates_csv: required for graph.source 'coordinates'")
    if g.source == "adjacency":
        _check(bool(g.adjacency_csv), "graph.adjacency_csv: required for graph.source 'adjacency'")
    if g.source == "synth":
        _check(
            d.source == "synth",
            "graph.source: 'synth' graphs only pair with synthetic data; "
            "point csv data at coordinates or an adjacency matrix",
        )
    _check(g.metric in ("euclidean", "greatcircle"), "graph.metric: must be 'euclidean' or 'greatcircle'")
    _check(g.kernel_width is None or g.kernel_width > 0, "graph.kernel_width: must be positive when set")
    _check(g.threshold >= 0, "graph.threshold: must be >= 0")

    sc = cfg.schedule
    _check(sc.steps >= 1, "schedule.steps: must be >= 1")
    _check(0 < sc.beta_start < 1, "schedule.beta_start: must be in (0, 1)")
    _check(0 < sc.beta_end < 1, "schedule.beta_end: must be in (0, 1)")
    _check(sc.beta_start <= sc.beta_end, "schedule: beta_start must not exceed beta_end")
    _check(all(s >= 2 for s in sc.steps_grid), "schedule.steps_grid: entries must be >= 2")
    _check(all(0 < b < 1 for b in sc.beta_grid), "schedule.beta_grid: entries must be in (0, 1)")

    o = cfg.ode
    _check(o.k >= 0, "ode.k: must be >= 0")
    _check(o.rtol > 0, "ode.rtol: must be positive")
    _check(o.atol > 0, "ode.atol: must be positive")
    _check(o.max_steps >= 1, "ode.max_steps: must be >= 1")

    m = cfg.model
    for name in ("blocks", "hidden", "heads", "time_embed", "node_embed", "channel_embed", "step_embed"):
        _check(getattr(m, name) >= 1, f"model.{name}: must be >= 1")
    _check(m.hidden % m.heads == 0, "model: hidden must be divisible by heads")

    t = cfg.training
    _check(t.epochs >= 1, "training.epochs: must be >= 1")
    _check(t.batch_size >= 1, "training.batch_size: must be >= 1")
    _check(t.learning_rate > 0, "training.learning_rate: must be positive")

    sa = cfg.sampling
    _check(sa.ensemble >= 1, "sampling.ensemble: must be >= 1")
    _check(sa.split in ("train", "val", "test"), "sampling.split: must be 'train', 'val', or 'test'")
    _check(sa.max_windows >= 0, "sampling.max_windows: must be >= 0 (0 means all)")
    return cfg


def config_from_dict(raw: dict, overrides: typing.Sequence[str] = ()) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected a JSON object")
    raw = json.loads(json.dumps(raw))  # deep copy, and reject non-JSON values
    raw = _apply_overrides(raw, overrides)
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")
    seed = _coerce(raw.get("seed", 0), int, "seed")
    sections = {
        name: _build_section(cls, raw.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    return _validate(RunConfig(seed=seed, **sections))


def load_config(path: str | None, overrides: typing.Sequence[str] = ()) -> RunConfig:
    """Load a config file (all defaults when ``path`` is None) and apply
    ``--set`` overrides."""
    if path is None:
        raw: dict = {}
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, overrides)
