"""Shared test fixtures: independent oracles and small builders.

Everything here is deliberately written the straightforward way (dense
loops, quadrature, textbook update rules) so the fast implementations in
the package are checked against a second, independent route.
"""

from __future__ import annotations

import numpy as np
import torch

from odecast.graph import SensorGraph
from odecast.numerics import DTYPE, TORCH_DTYPE, RngStream
from odecast.schedule import NoiseSchedule


def random_graph(stream: RngStream, n_nodes: int, extra_edges: int = 0) -> SensorGraph:
    """Connected random graph: a random spanning tree plus optional extra
    edges, with uniform random positive weights."""
    a = np.zeros((n_nodes, n_nodes), dtype=DTYPE)
    order = stream.permutation(n_nodes)
    for i in range(1, n_nodes):
        j = order[int(stream.integers(0, i, ()))]
        w = float(stream.uniform(0.2, 1.0, ()))
        a[order[i], j] = a[j, order[i]] = w
    for _ in range(extra_edges):
        i = int(stream.integers(0, n_nodes, ()))
        j = int(stream.integers(0, n_nodes, ()))
        if i != j:
            w = float(stream.uniform(0.2, 1.0, ()))
            a[i, j] = a[j, i] = w
    return SensorGraph.from_adjacency(a)


def crps_quadrature(samples: np.ndarray, truth: float) -> float:
    """CRPS of a scalar ensemble by quadrature of the definition: the
    integral of (F(z) - step(z - y))^2 over z.

    The integrand is constant between consecutive breakpoints (the sample
    values and the observation) and zero outside them, so midpoint
    evaluation over the breakpoint partition integrates it exactly. The CDF
    is evaluated by counting, sharing no algebra with the kernel-form
    estimator under test.
    """
    s = np.sort(np.asarray(samples, dtype=DTYPE))
    breaks = np.unique(np.concatenate([s, [truth]]))
    mids = (breaks[1:] + breaks[:-1]) / 2.0
    widths = np.diff(breaks)
    cdf = np.searchsorted(s, mids, side="right") / s.size
    step = (mids >= truth).astype(DTYPE)
    return float(np.sum(widths * (cdf - step) ** 2))


def ddpm_posterior_step(x_s, eps_hat, s: int, schedule: NoiseSchedule, noise):
    """Textbook ancestral sampling update for a plain DDPM.

    x_{s-1} = (x_s - beta_s/sqrt(1-abar_s) * eps_hat) / sqrt(alpha_s)
              + sigma_s * noise,  sigma_s^2 = beta_s (1-abar_{s-1}) / (1-abar_s)
    """
    beta = schedule.beta_at(s)
    alpha = 1.0 - beta
    abar = schedule.alpha_bar_at(s)
    abar_prev = schedule.alpha_bar_at(s - 1)
    mean = (x_s - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if s == 1:
        return mean
    sigma = np.sqrt(beta * (1.0 - abar_prev) / (1.0 - abar))
    return mean + sigma * noise


class OracleDenoiser:
    """Returns the exact blended-noise target from known ground truth.

    Mimics the denoiser's calling convention (including the invocation
    counter) without any learned state.
    """

    def __init__(self, x0: torch.Tensor, schedule: NoiseSchedule):
        self.x0 = x0.to(TORCH_DTYPE)
        self.schedule = schedule
        self.invocations = 0

    def __call__(self, x_s, x_a, s, observed_mask):
        batch = x_s.shape[0] if x_s.dim() == 4 else 1
        self.invocations += batch
        step = int(s) if not torch.is_tensor(s) else int(s.reshape(-1)[0])
        abar = self.schedule.alpha_bar_at(step)
        x0 = self.x0
        if x_s.dim() == 4 and x0.dim() == 3:
            x0 = x0.unsqueeze(0)
        return (x_s - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Dense central finite differences of a scalar function."""
    g = np.zeros_like(x, dtype=DTYPE)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f(x)
        flat[i] = keep - step
        dn = f(x)
        flat[i] = keep
        out[i] = (up - dn) / (2.0 * step)
    return g
