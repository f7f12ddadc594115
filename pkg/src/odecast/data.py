"""Series storage, preprocessing, windowing, and the synthetic benchmark
generator.

A :class:`SeriesStore` is a uniformly sampled multivariate series on a sensor
network: values of shape (T, N, C) with NaN marking missing entries, plus
timestamps and axis labels. Preprocessing is deliberately boring and
leakage-safe: a single-pass centered rolling-mean imputation whose fallback
uses train-split channel means, and per-channel standardization whose
statistics also come from the train split only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DegenerateInputError
from .graph import SensorGraph, synthetic_graph
from .numerics import DTYPE, RngStream
from .ode import closed_form_solution

EPOCH_DEFAULT = np.datetime64("2021-01-01T00:00:00", "s")


@dataclass(frozen=True)
class SeriesStore:
    values: np.ndarray = field(repr=False)  # (T, N, C), NaN = missing
    timestamps: np.ndarray = field(repr=False)  # (T,) datetime64[s], uniform
    node_ids: tuple[str, ...]
    channels: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise ContractViolation(f"values must have shape (T, N, C), got {v.shape}")
        if v.dtype != DTYPE:
            raise ContractViolation("values must be float64")
        t, n, c = v.shape
        if len(self.timestamps) != t:
            raise ContractViolation("timestamps length does not match values")
        if len(self.node_ids) != n:
            raise ContractViolation("node_ids length does not match values")
        if len(self.channels) != c:
            raise ContractViolation("channels length does not match values")
        if t >= 2:
            deltas = np.diff(self.timestamps.astype("datetime64[s]").astype(np.int64))
            if deltas.min(initial=1) <= 0 or np.unique(deltas).size != 1:
                raise ContractViolation("timestamps must be strictly increasing and uniform")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]

    @property
    def interval_seconds(self) -> float:
        if self.length < 2:
            return float("nan")
        t = self.timestamps.astype("datetime64[s]").astype(np.int64)
        return float(t[1] - t[0])

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values, **meta_updates) -> "SeriesStore":
        meta = dict(self.meta)
        meta.update(meta_updates)
        return replace(self, values=np.asarray(values, dtype=DTYPE), meta=meta)


def make_store(values, node_ids=None, channels=None, start=EPOCH_DEFAULT, step_seconds=3600):
    """Wrap a raw (T, N, C) array in a store with hourly timestamps by
    default."""
    v = np.asarray(values, dtype=DTYPE)
    if v.ndim != 3:
        raise ContractViolation(f"values must have shape (T, N, C), got {v.shape}")
    t, n, c = v.shape
    stamps = np.datetime64(start, "s") + np.arange(t) * np.timedelta64(int(step_seconds), "s")
    ids = tuple(node_ids) if node_ids is not None else tuple(f"n{i:02d}" for i in range(n))
    chans = tuple(channels) if channels is not None else tuple(f"ch{i}" for i in range(c))
    return SeriesStore(values=v, timestamps=stamps, node_ids=ids, channels=chans)


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window layout and chronological split ratios."""

    history: int = 12
    horizon: int = 12
    stride: int = 1
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.history < 1 or self.horizon < 1 or self.stride < 1:
            raise ContractViolation("history, horizon, and stride must be positive")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ContractViolation("ratios must be three non-negative numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ContractViolation("split ratios must sum to 1")

    @property
    def window(self) -> int:
        return self.history + self.horizon

    def split_bounds(self, total: int) -> tuple[int, int]:
        """Chronological boundaries: train is [0, b1), validation [b1, b2),
        test [b2, total)."""
        b1 = int(total * self.ratios[0])
        b2 = int(total * (self.ratios[0] + self.ratios[1]))
        return b1, b2

    def split_range(self, total: int, split: str) -> tuple[int, int]:
        b1, b2 = self.split_bounds(total)
        try:
            return {"train": (0, b1), "val": (b1, b2), "test": (b2, total)}[split]
        except KeyError:
            raise ContractViolation(f"unknown split {split!r}") from None


def rolling_mean_fill(values: np.ndarray, half_window: int) -> np.ndarray:
    """Single-pass centered rolling-mean fill on a (T, N, C) array with NaN
    gaps. Each gap gets the mean of the originally observed values within
    ``half_window`` samples on either side (the gap itself excluded); gaps
    with an all-missing window stay NaN for the caller's fallback."""
    missing = np.isnan(values)
    observed = ~missing
    vals0 = np.where(observed, values, 0.0)
    kernel = np.ones(2 * half_window + 1, dtype=DTYPE)
    kernel[half_window] = 0.0  # exclude the center point
    filled = values.copy()
    for n in range(values.shape[1]):
        for c in range(values.shape[2]):
            col_missing = missing[:, n, c]
            if not col_missing.any():
                continue
            sums = np.convolve(vals0[:, n, c], kernel, mode="same")
            counts = np.convolve(observed[:, n, c].astype(DTYPE), kernel, mode="same")
            usable = col_missing & (counts > 0)
            filled[usable, n, c] = sums[usable] / counts[usable]
    return filled


def impute_rolling_mean(store: SeriesStore, spec: WindowSpec, window_hours: float = 24.0) -> SeriesStore:
    """Fill missing entries with a centered rolling mean, in one pass.

    The window spans ``window_hours`` of wall time (so +-12 samples for
    hourly data), the missing point itself excluded; only originally observed
    values contribute, so already-imputed points never feed later ones. Points
    whose whole window is missing fall back to the channel's train-split mean.
    Observed values are never touched, which also makes the operation
    idempotent.
    """
    v = store.values
    missing = np.isnan(v)
    if not missing.any():
        return store
    if store.length >= 2:
        half = int(round(window_hours * 3600.0 / store.interval_seconds / 2.0))
    else:
        half = 0
    filled = rolling_mean_fill(v, half)

    still = np.isnan(filled)
    if still.any():
        b1, _ = spec.split_bounds(store.length)
        train_vals = v[:b1]
        train_obs = ~missing[:b1]
        for c in range(store.n_channels):
            ch_missing = still[:, :, c]
            if not ch_missing.any():
                continue
            ch_train = train_vals[:, :, c][train_obs[:, :, c]]
            if ch_train.size == 0:
                raise DegenerateInputError(
                    f"channel {store.channels[c]!r} has no observed value in the train "
                    "split; cannot impute"
                )
            filled[:, :, c][ch_missing] = ch_train.mean()
    return store.with_values(filled, imputed=True)


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel standardization statistics from the train split."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, arr: np.ndarray) -> np.ndarray:
        return (arr - self.mean) / self.std

    def invert(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(mean=np.asarray(d["mean"], dtype=DTYPE), std=np.asarray(d["std"], dtype=DTYPE))


def compute_channel_stats(store: SeriesStore, spec: WindowSpec) -> ChannelStats:
    """Global per-channel mean/std over the train slice (all nodes, all train
    timestamps). Raises when a channel is (numerically) constant."""
    b1, _ = spec.split_bounds(store.length)
    train = store.values[:b1]
    if np.isnan(train).any():
        raise ContractViolation("normalize requires an imputed (complete) series")
    if b1 < 2:
        raise ContractViolation("train split too short to estimate statistics")
    mean = train.mean(axis=(0, 1))
    std = train.std(axis=(0, 1))
    for c, s in enumerate(std):
        if s < 1e-8:
            raise DegenerateInputError(
                f"channel {store.channels[c]!r} is constant on the train split "
                f"(std={s:.3g}); refusing to normalize"
            )
    return ChannelStats(mean=mean, std=std)


def normalize_store(store: SeriesStore, stats: ChannelStats) -> SeriesStore:
    return store.with_values(stats.apply(store.values), normalized=True)


def denormalize_store(store: SeriesStore, stats: ChannelStats) -> SeriesStore:
    return store.with_values(stats.invert(store.values), normalized=False)


@dataclass(frozen=True)
class Window:
    start: int  # index of the first history frame
    history: np.ndarray  # (H, N, C)
    future: np.ndarray  # (H', N, C)


def windows(store: SeriesStore, spec: WindowSpec, split: str = "train") -> list[Window]:
    """Sliding windows that lie entirely inside one chronological split, so
    no window straddles a split boundary."""
    lo, hi = spec.split_range(store.length, split)
    length = hi - lo
    out: list[Window] = []
    span = spec.window
    if length < span:
        return out
    for s in range(lo, hi - span + 1, spec.stride):
        out.append(
            Window(
                start=s,
                history=store.values[s : s + spec.history],
                future=store.values[s + spec.history : s + span],
            )
        )
    return out


def window_count(segment_length: int, spec: WindowSpec) -> int:
    span = spec.window
    if segment_length < span:
        return 0
    return (segment_length - span) // spec.stride + 1


def stack_windows(ws: list[Window]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (W, H, N, C) history and (W, H', N, C) future
    arrays."""
    if not ws:
        raise ContractViolation("no windows to stack")
    hist = np.stack([w.history for w in ws])
    fut = np.stack([w.future for w in ws])
    return hist, fut


# ---------------------------------------------------------------------------
# Synthetic benchmark


def synth_generate(
    n_nodes: int,
    n_channels: int,
    length: int,
    stream: RngStream,
    k_true: float = 0.1,
    noise_sigma: float = 0.15,
    season_amps: tuple[float, ...] = (1.0, 0.4),
    season_periods: tuple[float, ...] = (12.0, 24.0),
    phase_jitter: float = 0.3,
    graph: SensorGraph | None = None,
    coords: np.ndarray | None = None,
) -> tuple[SeriesStore, SensorGraph, np.ndarray]:
    """Generate a graph-diffusion benchmark series with known dynamics.

    The anomaly field follows the discrete-time diffusion recursion
    ``a_{t+1} = P a_t + noise_sigma * xi_t`` where P is the one-interval heat
    propagator for ``k_true`` on the graph, so the spatial dynamics stay alive
    over arbitrarily long series. On top of it, each node/channel gets a
    sinusoidal seasonal profile whose phases are shared up to a small jitter
    (the seasonal field is spatially smooth, the anomaly field is not).
    Observed values are ``x_t = a_t + season(t)``.

    With ``noise_sigma = 0`` and no seasonal amplitude the series is exactly
    the closed-form heat trajectory of its own initial frame. All parameters
    are recorded in ``store.meta`` for oracle use.
    """
    if length < 4:
        raise ContractViolation("length must be at least 4")
    if n_channels < 1:
        raise ContractViolation("need at least one channel")
    if len(season_amps) != len(season_periods):
        raise ContractViolation("season_amps and season_periods must align")
    if graph is None:
        graph, coords = synthetic_graph(n_nodes, stream.substream(1))
    elif coords is None:
        coords = np.zeros((graph.n_nodes, 2), dtype=DTYPE)
    if graph.n_nodes != n_nodes:
        raise ContractViolation("graph size does not match n_nodes")

    n, c = n_nodes, n_channels
    decay = np.exp(-k_true * graph.eigenvalues)  # one-interval modal decay
    basis = graph.eigenvectors

    def propagate(state):
        return basis @ (decay[:, None] * (basis.T @ state))

    noise_stream = stream.substream(2)
    a = np.empty((length, n, c), dtype=DTYPE)
    a[0] = noise_stream.gaussian((n, c))
    for t in range(1, length):
        a[t] = propagate(a[t - 1])
        if noise_sigma > 0:
            a[t] += noise_sigma * noise_stream.gaussian((n, c))

    season = np.zeros((length, n, c), dtype=DTYPE)
    phase_stream = stream.substream(3)
    tt = np.arange(length, dtype=DTYPE)
    for amp, period in zip(season_amps, season_periods):
        if amp == 0.0:
            continue
        base = phase_stream.uniform(0.0, 2.0 * np.pi, (1, 1, c))
        jitter = phase_stream.uniform(-phase_jitter, phase_jitter, (1, n, c))
        phases = base + jitter
        season += amp * np.sin(2.0 * np.pi * tt[:, None, None] / period + phases)

    store = make_store(a + season)
    store.meta.update(
        {
            "kind": "synthetic-graph-diffusion",
            "k_true": float(k_true),
            "noise_sigma": float(noise_sigma),
            "season_amps": list(map(float, season_amps)),
            "season_periods": list(map(float, season_periods)),
            "phase_jitter": float(phase_jitter),
            "seed": stream.seed,
            "stream_id": stream.stream_id,
        }
    )
    return store, graph, coords


def synth_oracle_trajectory(store: SeriesStore, graph: SensorGraph) -> np.ndarray:
    """The noise-free closed-form trajectory implied by a synthetic store's
    recorded parameters and initial frame (valid when it was generated with
    zero noise and zero seasonal amplitude)."""
    k = store.meta["k_true"]
    times = np.arange(1, store.length, dtype=DTYPE)
    rest = closed_form_solution(store.values[0], graph, k, times)
    return np.concatenate([store.values[:1], rest], axis=0)


# ---------------------------------------------------------------------------
# CSV interfaces

LONG_HEADER = ["timestamp", "node_id", "channel", "value"]


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else format(x, ".17g")


def save_series_csv(store: SeriesStore, path, fmt: str = "long") -> None:
    """Write the series as CSV.

    ``long`` rows are ``timestamp,node_id,channel,value`` with an empty value
    field for missing entries; ``wide`` has one ``node|channel`` column per
    pair.
    """
    stamps = [str(ts) for ts in store.timestamps.astype("datetime64[s]")]
    with open(path, "w", newline="") as fh:
        if fmt == "long":
            fh.write(",".join(LONG_HEADER) + "\n")
            for t, ts in enumerate(stamps):
                for n, nid in enumerate(store.node_ids):
                    for c, ch in enumerate(store.channels):
                        fh.write(f"{ts},{nid},{ch},{_fmt(store.values[t, n, c])}\n")
        elif fmt == "wide":
            cols = [f"{nid}|{ch}" for nid in store.node_ids for ch in store.channels]
            fh.write("timestamp," + ",".join(cols) + "\n")
            flat = store.values.reshape(store.length, -1)
            for t, ts in enumerate(stamps):
                fh.write(ts + "," + ",".join(_fmt(x) for x in flat[t]) + "\n")
        else:
            raise ContractViolation(f"unknown series format {fmt!r}")


def load_series_csv(path) -> SeriesStore:
    """Read a series CSV in either the long or the wide layout (detected from
    the header)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ContractViolation(f"{path}: empty series file") from None
        header = [h.strip() for h in header]
        if header == LONG_HEADER:
            return _load_long(reader, path)
        if header and header[0] == "timestamp" and all("|" in h for h in header[1:]):
            return _load_wide(reader, header[1:], path)
        raise ContractViolation(
            f"{path}: unrecognized series header; expected {','.join(LONG_HEADER)} "
            "or timestamp,<node>|<channel>,..."
        )


def _parse_ts(text: str, where: str) -> np.datetime64:
    try:
        return np.datetime64(text, "s")
    except ValueError as exc:
        raise ContractViolation(f"{where}: bad timestamp {text!r}") from exc


def _load_long(reader, path) -> SeriesStore:
    stamps: list[np.datetime64] = []
    stamp_index: dict = {}
    nodes: list[str] = []
    node_index: dict = {}
    chans: list[str] = []
    chan_index: dict = {}
    entries: list[tuple[int, int, int, float]] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ContractViolation(f"{path}:{line_no}: expected 4 columns, got {len(row)}")
        ts = _parse_ts(row[0].strip(), f"{path}:{line_no}")
        if ts not in stamp_index:
            stamp_index[ts] = len(stamps)
            stamps.append(ts)
        nid, ch = row[1].strip(), row[2].strip()
        if nid not in node_index:
            node_index[nid] = len(nodes)
            nodes.append(nid)
        if ch not in chan_index:
            chan_index[ch] = len(chans)
            chans.append(ch)
        raw = row[3].strip()
        if raw == "":
            value = np.nan
        else:
            try:
                value = float(raw)
            except ValueError as exc:
                raise ContractViolation(f"{path}:{line_no}: bad value {raw!r}") from exc
        entries.append((stamp_index[ts], node_index[nid], chan_index[ch], value))
    if not stamps:
        raise ContractViolation(f"{path}: no data rows")
    order = np.argsort(np.asarray(stamps).astype("datetime64[s]"))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    values = np.full((len(stamps), len(nodes), len(chans)), np.nan, dtype=DTYPE)
    for t, n, c, val in entries:
        values[rank[t], n, c] = val
    stamps_sorted = np.asarray(stamps).astype("datetime64[s]")[order]
    return SeriesStore(
        values=values,
        timestamps=stamps_sorted,
        node_ids=tuple(nodes),
        channels=tuple(chans),
    )


def _load_wide(reader, cols: list[str], path) -> SeriesStore:
    pairs = []
    for col in cols:
        nid, _, ch = col.partition("|")
        pairs.append((nid, ch))
    nodes = list(dict.fromkeys(nid for nid, _ in pairs))
    chans = list(dict.fromkeys(ch for _, ch in pairs))
    expected = [(nid, ch) for nid in nodes for ch in chans]
    if pairs != expected:
        raise ContractViolation(
            f"{path}: wide columns must enumerate channels within nodes, in order"
        )
    stamps: list[np.datetime64] = []
    rows: list[list[float]] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(cols) + 1:
            raise ContractViolation(f"{path}:{line_no}: expected {len(cols) + 1} columns")
        stamps.append(_parse_ts(row[0].strip(), f"{path}:{line_no}"))
        parsed = []
        for raw in row[1:]:
            raw = raw.strip()
            parsed.append(np.nan if raw == "" else float(raw))
        rows.append(parsed)
    if not stamps:
        raise ContractViolation(f"{path}: no data rows")
    values = np.asarray(rows, dtype=DTYPE).reshape(len(rows), len(nodes), len(chans))
    return SeriesStore(
        values=values,
        timestamps=np.asarray(stamps).astype("datetime64[s]"),
        node_ids=tuple(nodes),
        channels=tuple(chans),
    )
