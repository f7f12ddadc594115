"""Linear graph-diffusion prior.

The physics prior evolves a node-by-channel state X under the heat equation
on the sensor graph, dX/dt = -k L X with L the normalized Laplacian. Because
L is symmetric the solution has the spectral closed form
X(t) = V exp(-k w t) V^T X(0); the package still integrates the system with
an adaptive Dormand-Prince 5(4) scheme, and the closed form serves as an
independent reference for it.

Time is measured in sampling-interval units: forecasting the next H' frames
means evaluating the solution at t = 1, 2, ..., H'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, IntegrationFailure
from .graph import SensorGraph
from .numerics import DTYPE, as_array


@dataclass(frozen=True)
class OdeConfig:
    """Integrator settings for the diffusion prior."""

    k: float = 0.1
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000

    def __post_init__(self):
        if self.k < 0:
            raise ContractViolation("diffusivity k must be non-negative")
        if self.rtol <= 0 or self.atol <= 0:
            raise ContractViolation("tolerances must be positive")
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be at least 1")


def diffusion_rhs(state: np.ndarray, graph: SensorGraph, k: float) -> np.ndarray:
    """Right-hand side -k L X, applied per channel."""
    return -k * (graph.laplacian @ state)


# Dormand-Prince 5(4) coefficients. The last stage row doubles as the 5th
# order solution weights (first-same-as-last pair); ERR = b5 - b4 gives the
# embedded error estimate.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_ORDER_EXP = 1.0 / 5.0


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f0: np.ndarray, y0: np.ndarray, span: float, rtol: float, atol: float) -> float:
    # Cheap version of the classic starting-step heuristic: compare the state
    # scale against the derivative scale.
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d1 <= 1e-15:
        h = span
    else:
        h = 0.01 * d0 / d1 if d0 > 1e-15 else 1e-6
    return float(min(h, span))


def solve_dopri5(
    init, graph: SensorGraph, config: OdeConfig, eval_times
) -> np.ndarray:
    """Integrate dX/dt = -k L X from t=0, reporting X at each requested time.

    Steps adapt to the embedded 4th-order error estimate; the step count is
    hard-capped at ``config.max_steps`` and exceeding it raises rather than
    silently truncating the result. Returns an array of shape
    ``(len(eval_times),) + init.shape``.
    """
    y = as_array(init, "init").copy()
    if y.ndim == 1:
        y = y[:, None]
        squeeze = True
    else:
        squeeze = False
    if y.ndim != 2 or y.shape[0] != graph.n_nodes:
        raise ContractViolation(
            f"init must have shape (n_nodes, channels); got {np.shape(init)} for "
            f"{graph.n_nodes} nodes"
        )
    times = np.atleast_1d(np.asarray(eval_times, dtype=DTYPE))
    if times.size == 0:
        raise ContractViolation("eval_times must be non-empty")
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ContractViolation("eval_times must be strictly increasing and positive")

    lap = graph.laplacian
    k = config.k

    def rhs(state):
        return -k * (lap @ state)

    out = np.empty((times.size,) + y.shape, dtype=DTYPE)
    t = 0.0
    f_now = rhs(y)
    h = _initial_step(f_now, y, float(times[0]), config.rtol, config.atol)
    steps_taken = 0
    ks = np.empty((7,) + y.shape, dtype=DTYPE)

    for idx, t_target in enumerate(times):
        while t < t_target - 1e-14 * max(1.0, t_target):
            h = min(h, t_target - t)
            if steps_taken >= config.max_steps:
                raise IntegrationFailure(
                    f"dopri5 exceeded max_steps={config.max_steps} at t={t:.6g} "
                    f"(target {t_target:.6g}, current step {h:.3g}); tighten the "
                    "problem or raise the budget"
                )
            steps_taken += 1
            ks[0] = f_now
            for i in range(1, 7):
                yi = y + h * np.tensordot(_A[i], ks[:i], axes=(0, 0))
                ks[i] = rhs(yi)
            y_new = y + h * np.tensordot(_B5, ks, axes=(0, 0))
            err = h * np.tensordot(_ERR, ks, axes=(0, 0))
            norm = _error_norm(err, y, y_new, config.rtol, config.atol)
            if norm == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * norm ** (-_ORDER_EXP)))
            if norm <= 1.0:
                t += h
                y = y_new
                f_now = ks[6]  # first-same-as-last: stage 7 is rhs at (t+h, y_new)
            h *= factor
        out[idx] = y
    return out[:, :, 0] if squeeze else out


def closed_form_solution(init, graph: SensorGraph, k: float, eval_times) -> np.ndarray:
    """Reference solution via the Laplacian eigenbasis:
    X(t) = V diag(exp(-k w t)) V^T X(0)."""
    y0 = as_array(init, "init")
    squeeze = y0.ndim == 1
    if squeeze:
        y0 = y0[:, None]
    if y0.shape[0] != graph.n_nodes:
        raise ContractViolation("init row count must equal the node count")
    times = np.atleast_1d(np.asarray(eval_times, dtype=DTYPE))
    coeffs = graph.eigenvectors.T @ y0
    decays = np.exp(-k * np.outer(times, graph.eigenvalues))
    out = np.einsum("nm,tm,mc->tnc", graph.eigenvectors, decays, coeffs)
    return out[:, :, 0] if squeeze else out


def forecast_window(
    history, graph: SensorGraph, config: OdeConfig, horizon: int
) -> np.ndarray:
    """Prior forecast for the next ``horizon`` frames given an observed
    window: integrate forward from the final observed frame and report the
    state at t = 1..horizon."""
    h = as_array(history, "history")
    if h.ndim != 3:
        raise ContractViolation(f"history must have shape (T, N, C), got {h.shape}")
    if h.shape[1] != graph.n_nodes:
        raise ContractViolation("history node axis does not match the graph")
    if horizon < 1:
        raise ContractViolation("horizon must be at least 1")
    return solve_dopri5(h[-1], graph, config, np.arange(1, horizon + 1, dtype=DTYPE))
