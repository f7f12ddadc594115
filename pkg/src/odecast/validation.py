"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .graph import SensorGraph
from .numerics import DTYPE


def check_series(values, name: str = "X", allow_nan: bool = False) -> np.ndarray:
    """Validate a (T, N, C) series array and return it as float64.

    2-D input is treated as single-channel and expanded to (T, N, 1).
    """
    arr = np.asarray(values, dtype=DTYPE)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ContractViolation(
            f"{name} must have shape (time, nodes, channels); got ndim={arr.ndim}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ContractViolation(f"{name} has an empty axis: shape {arr.shape}")
    if not allow_nan and not np.isfinite(arr).all():
        raise ContractViolation(
            f"{name} contains non-finite values; impute or clean it first"
        )
    if allow_nan and np.isinf(arr).any():
        raise ContractViolation(f"{name} contains infinities")
    return arr


def check_windows(values, history: int, name: str = "X") -> tuple[np.ndarray, bool]:
    """Validate history windows shaped (history, N, C) or (W, history, N, C).

    Returns the array as (W, history, N, C) plus a flag telling whether the
    input was a single unbatched window.
    """
    arr = np.asarray(values, dtype=DTYPE)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise ContractViolation(
            f"{name} must be one window (history, nodes, channels) or a batch "
            f"(windows, history, nodes, channels); got ndim={np.asarray(values).ndim}"
        )
    if arr.shape[1] != history:
        raise ContractViolation(
            f"{name} has history length {arr.shape[1]}, expected {history}"
        )
    if not np.isfinite(arr).all():
        raise ContractViolation(f"{name} contains non-finite values")
    return arr, single


def check_graph(graph, n_nodes: int | None = None) -> SensorGraph:
    """Coerce a SensorGraph or a raw adjacency matrix into a SensorGraph."""
    if graph is None:
        raise ContractViolation("a sensor graph (or adjacency matrix) is required")
    if not isinstance(graph, SensorGraph):
        graph = SensorGraph.from_adjacency(np.asarray(graph, dtype=DTYPE))
    if n_nodes is not None and graph.n_nodes != n_nodes:
        raise ContractViolation(
            f"graph has {graph.n_nodes} nodes but the data has {n_nodes}"
        )
    return graph


def check_positive_int(value, name: str) -> int:
    iv = int(value)
    if iv != value or iv < 1:
        raise ContractViolation(f"{name} must be a positive integer; got {value!r}")
    return iv
