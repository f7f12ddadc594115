"""Numeric foundations: float64 policy, seedable random streams, symmetric
eigendecomposition with a deterministic sign convention, and a reverse-mode
gradient facade.

Everything numeric in this package is float64. Randomness never touches a
global generator: every draw goes through an explicit :class:`RngStream`
keyed by ``(seed, stream_id)``, so any quantity is reproducible bit-for-bit
from the pair plus the draw count, and parallel components stay independent
by using disjoint stream ids.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .errors import ContractViolation

DTYPE = np.float64
TORCH_DTYPE = torch.float64

_U64_MAX = 2**64

# Stream-id allocation. Components draw from disjoint ids derived from these
# bases so that no two pipeline stages ever share a stream.
STREAM_PARAMS = 1
STREAM_SYNTH = 3
STREAM_SAMPLE_BASE = 1_000
STREAM_TRAIN_EPOCH_BASE = 10_000


def as_array(values, name: str = "array", *, require_finite: bool = True) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally rejecting non-finite entries."""
    arr = np.asarray(values, dtype=DTYPE)
    if require_finite and not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite values")
    return arr


def as_tensor(values, name: str = "tensor") -> torch.Tensor:
    """Coerce to a float64 torch tensor (shares memory with numpy input when
    possible)."""
    if isinstance(values, torch.Tensor):
        return values.to(TORCH_DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=DTYPE))


class RngStream:
    """A named, counter-based random stream.

    Identical ``(seed, stream_id)`` pairs yield bit-identical draw sequences;
    distinct ``stream_id`` values yield independent sequences for the same
    seed. Backed by the Philox counter generator, whose key is exactly such a
    pair, so the guarantee holds by construction and does not depend on the
    order in which streams are created.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        for label, value in (("seed", seed), ("stream_id", stream_id)):
            if not isinstance(value, (int, np.integer)):
                raise ContractViolation(f"{label} must be an integer, got {type(value).__name__}")
            if not 0 <= int(value) < _U64_MAX:
                raise ContractViolation(f"{label} must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def substream(self, offset: int) -> "RngStream":
        """A fresh stream with id ``stream_id + offset``, same seed."""
        return RngStream(self.seed, self.stream_id + int(offset))

    def gaussian(self, shape: Sequence[int] | int = ()) -> np.ndarray:
        """Standard normal draws, float64."""
        return self._gen.standard_normal(size=shape, dtype=DTYPE)

    def gaussian_tensor(self, shape: Sequence[int] | int = ()) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(self.gaussian(shape)))

    def uniform(self, low: float = 0.0, high: float = 1.0, shape: Sequence[int] | int = ()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape: Sequence[int] | int = ()) -> np.ndarray:
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian(stream: RngStream, shape: Sequence[int] | int = ()) -> np.ndarray:
    """Standard normal draws from ``stream`` with the given shape."""
    if not isinstance(stream, RngStream):
        raise ContractViolation("gaussian expects an RngStream")
    return stream.gaussian(shape)


def eigh_symmetric(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix with a fixed sign convention.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvector columns ``v``. Each column is oriented so that its
    largest-magnitude entry is positive (ties broken toward the lowest row
    index), which makes the output deterministic across repeated calls on
    equal input.
    """
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix contains non-finite values")
    if m.size and np.abs(m - m.T).max() > 1e-10:
        raise ContractViolation("matrix is not symmetric within 1e-10")
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    # Orient each eigenvector: the entry of largest magnitude becomes positive.
    # np.argmax picks the first maximum, which is the tie-break we want.
    anchor = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[anchor, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return w, v * signs


class GradTape:
    """Registration surface for reverse-mode gradients.

    ``watch`` marks a float64 torch tensor as differentiable; ``gradient``
    evaluates d(loss)/d(param) for registered tensors. A loss that does not
    depend on a registered parameter yields a zero gradient of the parameter's
    shape. Asking for the gradient of an unregistered tensor is a contract
    violation.
    """

    def __init__(self):
        self._watched: list[torch.Tensor] = []

    def watch(self, tensor: torch.Tensor) -> torch.Tensor:
        if not isinstance(tensor, torch.Tensor):
            raise ContractViolation("GradTape.watch expects a torch tensor")
        if tensor.dtype != TORCH_DTYPE:
            raise ContractViolation("GradTape tensors must be float64")
        tensor.requires_grad_(True)
        if not any(tensor is t for t in self._watched):
            self._watched.append(tensor)
        return tensor

    def _check_registered(self, params: Sequence[torch.Tensor]) -> None:
        for i, p in enumerate(params):
            if not any(p is t for t in self._watched):
                raise ContractViolation(f"parameter {i} is not registered on this tape")

    def gradient(self, loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        params = list(params)
        self._check_registered(params)
        return grad(loss, params)


def grad(loss: torch.Tensor, params: Iterable[torch.Tensor]) -> list[torch.Tensor]:
    """Gradients of a scalar ``loss`` with respect to ``params``.

    Parameters the loss does not depend on get zero gradients. Parameters
    that were never marked differentiable raise a contract violation.
    """
    params = list(params)
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise ContractViolation("loss must be a scalar tensor")
    for i, p in enumerate(params):
        if not isinstance(p, torch.Tensor) or not p.requires_grad:
            raise ContractViolation(f"parameter {i} is not registered for gradients")
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=True)
    return [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)]


def central_difference(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, float64.

    Used as the independent check against reverse-mode results.
    """
    x = np.asarray(x, dtype=DTYPE)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = float(f(x))
        xf[i] = orig - step
        lo = float(f(x))
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return out
