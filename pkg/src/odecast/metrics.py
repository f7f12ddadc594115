"""Forecast scoring: deterministic errors plus the empirical CRPS.

All metrics are computed on denormalized (physical-unit) values and averaged
uniformly over horizon steps, nodes, and channels unless a caller restricts
the axes itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import as_array


def _aligned(pred, truth):
    p = as_array(pred, "pred")
    t = as_array(truth, "truth")
    if p.shape != t.shape:
        raise ContractViolation(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    if p.size == 0:
        raise ContractViolation("cannot score empty arrays")
    return p, t


def mae(pred, truth) -> float:
    p, t = _aligned(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _aligned(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def crps_empirical(samples, truth) -> np.ndarray:
    """CRPS of an ensemble against observations, pointwise.

    ``samples`` has shape ``(K,) + truth.shape``; the result has
    ``truth.shape``. Uses the kernel form

        mean_k |x_k - y| - (1 / (2 K^2)) * sum_{k,j} |x_k - x_j|

    which equals the integral of the squared difference between the
    ensemble's empirical step CDF and the observation's indicator CDF. With a
    single sample it reduces to the absolute error.
    """
    s = as_array(samples, "samples")
    y = as_array(truth, "truth")
    if s.ndim != y.ndim + 1 or s.shape[1:] != y.shape:
        raise ContractViolation(
            f"samples must have shape (K,) + truth.shape; got {s.shape} vs {y.shape}"
        )
    k = s.shape[0]
    if k < 1:
        raise ContractViolation("need at least one sample")
    term_obs = np.mean(np.abs(s - y[None]), axis=0)
    # Pairwise spread; ensembles are small (K <= a few dozen) so the direct
    # K^2 broadcast is fine.
    term_pair = np.abs(s[:, None] - s[None, :]).sum(axis=(0, 1)) / (2.0 * k * k)
    return term_obs - term_pair


def crps_mean(samples, truth) -> float:
    """Ensemble CRPS averaged uniformly over every forecast position."""
    return float(np.mean(crps_empirical(samples, truth)))


@dataclass
class ScoreReport:
    """Aggregate scores plus per-horizon breakdowns for plotting."""

    mae: float
    rmse: float
    crps: float | None = None
    n_windows: int = 0
    per_horizon_mae: list[float] = field(default_factory=list)
    per_horizon_crps: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "mae": self.mae,
            "rmse": self.rmse,
            "crps": self.crps,
            "n_windows": self.n_windows,
        }
        if self.per_horizon_mae:
            out["per_horizon_mae"] = list(self.per_horizon_mae)
        if self.per_horizon_crps:
            out["per_horizon_crps"] = list(self.per_horizon_crps)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["metric,value"]
        lines.append(f"mae,{self.mae:.17g}")
        lines.append(f"rmse,{self.rmse:.17g}")
        if self.crps is not None:
            lines.append(f"crps,{self.crps:.17g}")
        lines.append(f"n_windows,{self.n_windows}")
        return "\n".join(lines) + "\n"

    def horizon_csv(self) -> str:
        lines = ["horizon,mae,crps"]
        for i, m in enumerate(self.per_horizon_mae, start=1):
            c = self.per_horizon_crps[i - 1] if self.per_horizon_crps else float("nan")
            lines.append(f"{i},{m:.17g},{c:.17g}")
        return "\n".join(lines) + "\n"


def score_windows(mean_pred, truth, samples=None) -> ScoreReport:
    """Build a report from stacked windows.

    ``mean_pred`` and ``truth`` have shape (W, H, N, C); ``samples``, when
    given, has shape (W, K, H, N, C).
    """
    p, t = _aligned(mean_pred, truth)
    if p.ndim != 4:
        raise ContractViolation(f"expected (W, H, N, C) arrays, got shape {p.shape}")
    report = ScoreReport(
        mae=mae(p, t),
        rmse=rmse(p, t),
        n_windows=p.shape[0],
        per_horizon_mae=[float(np.mean(np.abs(p[:, h] - t[:, h]))) for h in range(p.shape[1])],
    )
    if samples is not None:
        s = as_array(samples, "samples")
        if s.ndim != 5 or s.shape[0] != p.shape[0] or s.shape[2:] != p.shape[1:]:
            raise ContractViolation(
                f"samples must have shape (W, K, H, N, C) matching predictions; got {s.shape}"
            )
        pointwise = crps_empirical(np.moveaxis(s, 1, 0), t)
        report.crps = float(np.mean(pointwise))
        report.per_horizon_crps = [float(np.mean(pointwise[:, h])) for h in range(p.shape[1])]
    return report
