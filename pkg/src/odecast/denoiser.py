"""Factored spectral denoiser.

The network that predicts the (residual-shifted) noise of a corrupted
space-time window. Instead of attending jointly over every (time, node,
channel) position, each block factors the interaction into three cheap axes:

* self-attention along time, independently per node and channel;
* self-attention along channels, independently per time and node;
* a spectral graph convolution along nodes: rotate into the Laplacian
  eigenbasis, scale each (mode, channel) pair with a learned gain, mix the
  hidden dimension, rotate back.

Each block is conditioned on the diffusion step through a sinusoidal code
fed through a per-block MLP, and on per-position side information (time
code, node and channel embeddings, observation mask) through a gated output
whose activations are bounded by construction. Blocks emit residual and skip
paths; the summed skips pass through a LayerNorm and a small head that
projects back to one value per position.

Everything runs in float64, and parameter initialization draws exclusively
from an explicit random stream, so models are reproducible bit-for-bit from
(seed, stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation, NumericFailure
from .graph import SensorGraph
from .numerics import TORCH_DTYPE, RngStream


@dataclass(frozen=True)
class FsdConfig:
    """Architecture hyperparameters.

    ``window`` is the full frame count the denoiser sees (history plus
    horizon); ``hidden`` must be divisible by ``heads``.
    """

    window: int
    n_nodes: int
    n_channels: int
    blocks: int = 8
    hidden: int = 64
    heads: int = 8
    time_embed: int = 16
    node_embed: int = 16
    channel_embed: int = 16
    step_embed: int = 128
    spectral_mix: bool = True

    def __post_init__(self):
        for name in ("window", "n_nodes", "n_channels", "blocks", "hidden", "heads"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")
        if self.hidden % self.heads != 0:
            raise ContractViolation(
                f"hidden ({self.hidden}) must be divisible by heads ({self.heads})"
            )
        for name in ("time_embed", "node_embed", "channel_embed", "step_embed"):
            v = getattr(self, name)
            if v < 2 or v % 2 != 0:
                raise ContractViolation(f"{name} must be an even integer >= 2")

    @property
    def side_dim(self) -> int:
        return self.time_embed + self.node_embed + self.channel_embed + 1

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "n_nodes": self.n_nodes,
            "n_channels": self.n_channels,
            "blocks": self.blocks,
            "hidden": self.hidden,
            "heads": self.heads,
            "time_embed": self.time_embed,
            "node_embed": self.node_embed,
            "channel_embed": self.channel_embed,
            "step_embed": self.step_embed,
            "spectral_mix": self.spectral_mix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FsdConfig":
        return cls(**d)


def sinusoidal_code(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style sinusoidal code: interleaved sin/cos over
    geometrically spaced frequencies. ``positions`` is a float tensor of any
    shape; the result appends a ``dim`` axis."""
    if dim < 2 or dim % 2 != 0:
        raise ContractViolation("embedding dim must be an even integer >= 2")
    half = dim // 2
    span = max(half - 1, 1)
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=TORCH_DTYPE) / span
    )
    angles = positions.to(TORCH_DTYPE)[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class MultiHeadSelfAttention(nn.Module):
    """Plain bidirectional multi-head self-attention over the middle axis of
    a (batch, length, dim) tensor."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.counter: dict | None = None
        self.counter_prefix = ""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, _ = x.shape
        qkv = self.qkv(x).reshape(b, length, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each (b, heads, length, head_dim)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        mixed = attn @ v
        merged = mixed.permute(0, 2, 1, 3).reshape(b, length, self.dim)
        if self.counter is not None:
            self.counter[self.counter_prefix + "_proj"] = (
                self.counter.get(self.counter_prefix + "_proj", 0)
                + b * length * 4 * self.dim * self.dim
            )
            self.counter[self.counter_prefix + "_mixing"] = (
                self.counter.get(self.counter_prefix + "_mixing", 0)
                + b * self.heads * 2 * length * length * self.head_dim
            )
        return self.out(merged)


class FsdBlock(nn.Module):
    def __init__(self, config: FsdConfig):
        super().__init__()
        d = config.hidden
        self.step_mlp = nn.Sequential(
            nn.Linear(config.step_embed, d), nn.SiLU(), nn.Linear(d, d)
        )
        self.temporal = MultiHeadSelfAttention(d, config.heads)
        self.temporal_norm = nn.LayerNorm(d)
        self.channel = MultiHeadSelfAttention(d, config.heads)
        self.channel_norm = nn.LayerNorm(d)
        # One gain per (Laplacian mode, data channel), neutral at init.
        self.spectral_gain = nn.Parameter(
            torch.ones(config.n_nodes, config.n_channels, dtype=TORCH_DTYPE)
        )
        self.spectral_mix = nn.Linear(d, d) if config.spectral_mix else None
        self.gate_hidden = nn.Linear(d, 2 * d)
        self.gate_side = nn.Linear(config.side_dim, 2 * d)
        self.out_proj = nn.Linear(d, 2 * d)
        self.counter: dict | None = None

    def _count(self, key: str, amount: int) -> None:
        if self.counter is not None:
            self.counter[key] = self.counter.get(key, 0) + amount

    def forward(
        self,
        h_in: torch.Tensor,  # (B, T, N, C, D)
        step_code: torch.Tensor,  # (B, step_embed)
        side: torch.Tensor,  # (B, T, N, C, side_dim)
        basis: torch.Tensor,  # (N, N) Laplacian eigenvectors
    ) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, n, c, d = h_in.shape
        h = h_in + self.step_mlp(step_code)[:, None, None, None, :]
        self._count("step_mlp", b * (step_code.shape[-1] * d + d * d))

        seq = h.permute(0, 2, 3, 1, 4).reshape(b * n * c, t, d)
        attn = self.temporal(seq).reshape(b, n, c, t, d).permute(0, 3, 1, 2, 4)
        h = self.temporal_norm(h + attn)

        seq = h.reshape(b * t * n, c, d)
        attn = self.channel(seq).reshape(b, t, n, c, d)
        h = self.channel_norm(h + attn)

        freq = torch.einsum("nm,btncd->btmcd", basis, h)
        freq = freq * self.spectral_gain[None, None, :, :, None]
        self._count("spectral_filter", b * t * n * c * d)
        if self.spectral_mix is not None:
            freq = self.spectral_mix(freq)
            self._count("spectral_mix", b * t * n * c * d * d)
        back = torch.einsum("nm,btmcd->btncd", basis, freq)
        self._count("spectral_transform", 2 * b * t * c * d * n * n)
        h = h + back  # residual only; no normalization on the spectral path

        mid = self.gate_hidden(h) + self.gate_side(side)
        gate, filt = mid.chunk(2, dim=-1)
        act = torch.sigmoid(gate) * torch.tanh(filt)
        self._count("gate", b * t * n * c * (2 * d * d + side.shape[-1] * 2 * d))
        y = self.out_proj(act)
        self._count("out_proj", b * t * n * c * 2 * d * d)
        res_delta, skip = y.chunk(2, dim=-1)
        return h_in + res_delta, skip


class FactoredSpectralDenoiser(nn.Module):
    """Noise predictor over (window, nodes, channels) tensors.

    ``forward(x_s, x_a, s, observed_mask)`` takes the corrupted window, the
    conditioning window (history plus prior forecast), the 1-based diffusion
    step, and the observation mask; it returns the predicted noise target
    with the input's shape. Inputs may be batched (leading axis) or single
    windows.
    """

    def __init__(self, config: FsdConfig, graph: SensorGraph, init_stream: RngStream | None = None):
        super().__init__()
        if graph.n_nodes != config.n_nodes:
            raise ContractViolation(
                f"graph has {graph.n_nodes} nodes but config expects {config.n_nodes}"
            )
        self.config = config
        self.register_buffer(
            "basis", torch.from_numpy(np.ascontiguousarray(graph.eigenvectors))
        )
        self.register_buffer(
            "time_codes",
            sinusoidal_code(torch.arange(config.window, dtype=TORCH_DTYPE), config.time_embed),
        )
        self.input_proj = nn.Linear(2, config.hidden)
        self.node_embedding = nn.Parameter(
            torch.zeros(config.n_nodes, config.node_embed, dtype=TORCH_DTYPE)
        )
        self.channel_embedding = nn.Parameter(
            torch.zeros(config.n_channels, config.channel_embed, dtype=TORCH_DTYPE)
        )
        self.blocks = nn.ModuleList(FsdBlock(config) for _ in range(config.blocks))
        self.skip_norm = nn.LayerNorm(config.hidden)
        self.head_hidden = nn.Linear(config.hidden, config.hidden)
        self.head_out = nn.Linear(config.hidden, 1)
        self.to(TORCH_DTYPE)

        self.invocations = 0
        self.op_counts: dict[str, int] = {}
        self._counting = False

        if init_stream is not None:
            self.init_parameters(init_stream)

    # -- initialization ----------------------------------------------------

    def init_parameters(self, stream: RngStream) -> None:
        """Deterministic init: linear weights get fan-scaled uniform values,
        biases zero, normalization layers identity, spectral gains one, and
        embedding tables small Gaussians. Every draw comes from ``stream`` in
        registration order."""
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("node_embedding") or name.endswith("channel_embedding"):
                    param.copy_(torch.from_numpy(0.02 * stream.gaussian(tuple(param.shape))))
                elif name.endswith("spectral_gain"):
                    param.fill_(1.0)
                elif name.endswith(".bias"):
                    param.zero_()
                elif name.endswith(".weight") and param.dim() == 2:
                    bound = 1.0 / math.sqrt(param.shape[1])
                    param.copy_(
                        torch.from_numpy(stream.uniform(-bound, bound, tuple(param.shape)))
                    )
                elif name.endswith(".weight") and param.dim() == 1:
                    param.fill_(1.0)  # LayerNorm scale
                else:
                    raise ContractViolation(f"no initialization rule for parameter {name}")

    def parameter_manifest(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(p.shape) for name, p in self.named_parameters()}

    # -- op counting -------------------------------------------------------

    def enable_op_counting(self, enabled: bool = True) -> None:
        self._counting = enabled
        counter = self.op_counts if enabled else None
        for block in self.blocks:
            block.counter = counter
            block.temporal.counter = counter
            block.temporal.counter_prefix = "temporal"
            block.channel.counter = counter
            block.channel.counter_prefix = "channel"

    def reset_counters(self) -> None:
        self.invocations = 0
        self.op_counts.clear()

    # -- forward -----------------------------------------------------------

    def _side_info(self, observed_mask: torch.Tensor) -> torch.Tensor:
        b, t, n, c = observed_mask.shape
        parts = [
            self.time_codes[None, :, None, None, :].expand(b, t, n, c, -1),
            self.node_embedding[None, None, :, None, :].expand(b, t, n, c, -1),
            self.channel_embedding[None, None, None, :, :].expand(b, t, n, c, -1),
            observed_mask[..., None],
        ]
        return torch.cat(parts, dim=-1)

    def _check_finite(self, tensor: torch.Tensor, stage: str) -> None:
        if not torch.isfinite(tensor).all():
            raise NumericFailure(f"non-finite activation leaving {stage}")

    def forward(
        self,
        x_s: torch.Tensor,
        x_a: torch.Tensor,
        s: torch.Tensor | int,
        observed_mask: torch.Tensor,
    ) -> torch.Tensor:
        cfg = self.config
        squeeze = x_s.dim() == 3
        if squeeze:
            x_s = x_s[None]
            x_a = x_a[None]
            if observed_mask.dim() == 3:
                observed_mask = observed_mask[None]
        if isinstance(s, int):
            s = torch.full((x_s.shape[0],), s, dtype=torch.long)
        elif s.dim() == 0:
            s = s[None].expand(x_s.shape[0]).clone()
        expected = (x_s.shape[0], cfg.window, cfg.n_nodes, cfg.n_channels)
        for label, tensor in (("x_s", x_s), ("x_a", x_a), ("observed_mask", observed_mask)):
            if tuple(tensor.shape) != expected:
                raise ContractViolation(
                    f"{label} has shape {tuple(tensor.shape)}, expected {expected}"
                )
            if tensor.dtype != TORCH_DTYPE:
                raise ContractViolation(f"{label} must be float64")
        if s.shape != (x_s.shape[0],):
            raise ContractViolation("step tensor must have one entry per batch element")
        self._check_finite(x_s, "input x_s")
        self._check_finite(x_a, "input x_a")

        self.invocations += int(x_s.shape[0])

        h = self.input_proj(torch.stack([x_s, x_a], dim=-1))
        step_code = sinusoidal_code(s.to(TORCH_DTYPE), cfg.step_embed)
        side = self._side_info(observed_mask)
        if self._counting:
            bsz = x_s.shape[0]
            per_pos = bsz * cfg.window * cfg.n_nodes * cfg.n_channels
            self.op_counts["input_proj"] = self.op_counts.get("input_proj", 0) + per_pos * 2 * cfg.hidden
            self.op_counts["head"] = self.op_counts.get("head", 0) + per_pos * (
                cfg.hidden * cfg.hidden + cfg.hidden
            )

        skip_sum = torch.zeros_like(h)
        for i, block in enumerate(self.blocks):
            h, skip = block(h, step_code, side, self.basis)
            self._check_finite(h, f"block {i}")
            skip_sum = skip_sum + skip
        out = self.head_out(torch.relu(self.head_hidden(self.skip_norm(skip_sum))))
        out = out[..., 0]
        self._check_finite(out, "output head")
        return out[0] if squeeze else out


def operation_counts(config: FsdConfig) -> dict[str, int]:
    """Analytic multiply-accumulate counts for one unbatched forward pass,
    per component. The attention *mixing* terms are quadratic in their own
    axis length, the spectral filter is linear in the node count, and the
    basis rotations (reported separately) are quadratic in it."""
    t, n, c, d = config.window, config.n_nodes, config.n_channels, config.hidden
    b = config.blocks
    side = config.side_dim
    counts = {
        "temporal_proj": b * t * n * c * 4 * d * d,
        "temporal_mixing": b * n * c * 2 * t * t * d,
        "channel_proj": b * t * n * c * 4 * d * d,
        "channel_mixing": b * t * n * 2 * c * c * d,
        "spectral_filter": b * t * n * c * d,
        "spectral_transform": b * 2 * t * c * d * n * n,
        "gate": b * t * n * c * (2 * d * d + side * 2 * d),
        "out_proj": b * t * n * c * 2 * d * d,
        "step_mlp": b * (config.step_embed * d + d * d),
        "input_proj": t * n * c * 2 * d,
        "head": t * n * c * (d * d + d),
    }
    if config.spectral_mix:
        counts["spectral_mix"] = b * t * n * c * d * d
    return counts
