#!/usr/bin/env python3.10
"""
Numeric substrate shared by every training and synthesis loop.

Reverse-mode differentiation and the first-order optimizers are torch's; this
module pins the conventions the rest of the service relies on:

* float64 for anything that is checked against tight tolerances (DFT pair,
  attribution sums, aligner solves); models keep float32 parameters;
* a dense DFT pair (unnormalised forward, 1/HW inverse) built from cached
  cos/sin matrices, exact and differentiable at desk resolution;
* TopK masking with lowest-index tie breaking and a straight-through gradient;
* finiteness checks that turn NaN/Inf into ``NumericDivergenceError``.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import torch
from torch import Tensor

from .errors import NumericDivergenceError, ShapeError

DTYPE = torch.float64


def as_tensor(values, requires_grad: bool = False) -> Tensor:
    tensor = torch.as_tensor(values, dtype=DTYPE).clone()
    tensor.requires_grad_(requires_grad)
    return tensor


def seeded_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def check_finite(tensor: Tensor, stage: str, step: Optional[int] = None) -> Tensor:
    if not bool(torch.isfinite(tensor).all()):
        raise NumericDivergenceError(stage, step)
    return tensor


def backward(root: Tensor, leaves: Sequence[Tensor]) -> List[Tensor]:
    """Differentiate a scalar ``root`` with respect to ``leaves``.

    Each leaf's ``.grad`` is overwritten with d root / d leaf and the same
    gradients are returned in leaf order. Leaves the root does not depend on
    get zeros. The graph is released afterwards.
    """
    if root.numel() != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {tuple(root.shape)}")
    check_finite(root.detach(), "backward")
    leaves = list(leaves)
    if root.requires_grad:
        raw = torch.autograd.grad(root, leaves, allow_unused=True)
    else:
        raw = [None] * len(leaves)
    grads = []
    for leaf, grad in zip(leaves, raw):
        grad = torch.zeros_like(leaf) if grad is None else grad.detach()
        check_finite(grad, "backward")
        leaf.grad = grad.clone()
        grads.append(grad)
    return grads


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


@dataclass
class ComplexGrid:
    """Real/imaginary planes of a 2-D spectrum; leading batch/channel dims allowed."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"real {tuple(self.real.shape)} and imag {tuple(self.imag.shape)} differ")

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.real.shape[-2:])

    def magnitude(self) -> Tensor:
        return torch.sqrt(self.real ** 2 + self.imag ** 2)

    def phase(self) -> Tensor:
        return torch.atan2(self.imag, self.real)

    @classmethod
    def from_polar(cls, magnitude: Tensor, phase: Tensor) -> "ComplexGrid":
        return cls(real=magnitude * torch.cos(phase), imag=magnitude * torch.sin(phase))


@lru_cache(maxsize=16)
def _dft_basis(n: int) -> Tuple[Tensor, Tensor]:
    k = torch.arange(n, dtype=torch.int64)
    # Reduce k*j mod n before scaling so large angles never lose precision
    angles = (2.0 * math.pi / n) * torch.remainder(torch.outer(k, k), n).to(DTYPE)
    return torch.cos(angles), torch.sin(angles)


def _check_grid(grid: Tensor) -> Tuple[int, int]:
    if grid.dim() < 2:
        raise ShapeError(f"DFT needs at least 2 dims, got shape {tuple(grid.shape)}")
    height, width = grid.shape[-2:]
    if height < 1 or width < 1:
        raise ShapeError(f"DFT needs H, W >= 1, got {height}x{width}")
    return height, width


def dft2(grid: Tensor) -> ComplexGrid:
    """Unnormalised 2-D DFT of a real (..., H, W) tensor via dense cos/sin matrices."""
    height, width = _check_grid(grid)
    grid = grid.to(DTYPE)
    cos_h, sin_h = _dft_basis(height)
    cos_w, sin_w = _dft_basis(width)
    real = cos_h @ grid @ cos_w - sin_h @ grid @ sin_w
    imag = -(sin_h @ grid @ cos_w + cos_h @ grid @ sin_w)
    return ComplexGrid(real=real, imag=imag)


def idft2(spectrum: ComplexGrid) -> Tensor:
    """Real part of the inverse 2-D DFT with 1/HW normalisation."""
    height, width = _check_grid(spectrum.real)
    cos_h, sin_h = _dft_basis(height)
    cos_w, sin_w = _dft_basis(width)
    real, imag = spectrum.real.to(DTYPE), spectrum.imag.to(DTYPE)
    row_real = cos_h @ real - sin_h @ imag
    row_imag = sin_h @ real + cos_h @ imag
    return (row_real @ cos_w - row_imag @ sin_w) / float(height * width)


def hermitian_phase(free_phase: Tensor) -> Tensor:
    """Anti-symmetrise a free phase field: phi(-k) = -phi(k) on the DFT index grid.

    Paired with a magnitude that is symmetric under k -> -k, the resulting
    spectrum is the DFT of a real image, so the magnitude survives the inverse
    transform exactly.
    """
    mirrored = torch.roll(torch.flip(free_phase, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
    return 0.5 * (free_phase - mirrored)


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


class OptimizerState:
    """A torch optimizer plus the bookkeeping the training loops report on."""

    def __init__(
        self,
        params: Iterable[Tensor],
        kind: str = "adam",
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        stage: str = "optimizer",
    ):
        self.params = list(params)
        self.kind = OptimizerKind(kind)
        self.lr = float(lr)
        self.betas = betas
        self.eps = eps
        self.stage = stage
        self.step_count = 0
        if self.kind is OptimizerKind.ADAM:
            self.optimizer = torch.optim.Adam(self.params, lr=self.lr, betas=betas, eps=eps)
        else:
            self.optimizer = torch.optim.SGD(self.params, lr=self.lr)

    def moments(self, param: Tensor) -> Optional[Tuple[Tensor, Tensor]]:
        state = self.optimizer.state.get(param)
        if not state:
            return None
        return state["exp_avg"], state["exp_avg_sq"]

    def apply(self, grads: Sequence[Optional[Tensor]]) -> None:
        """Install explicit gradients (None skips a parameter) and take one step."""
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for param, grad in zip(self.params, grads):
            if grad is None:
                param.grad = None
                continue
            if tuple(grad.shape) != tuple(param.shape):
                raise ShapeError(f"gradient shape {tuple(grad.shape)} != parameter shape {tuple(param.shape)}")
            check_finite(grad, self.stage, self.step_count)
            param.grad = grad.detach().to(param.dtype).clone()
        self.optimizer.step()
        self.step_count += 1

    def minimize(self, loss: Tensor) -> float:
        """Zero grads, backpropagate ``loss``, step. Returns the loss value."""
        check_finite(loss.detach(), self.stage, self.step_count)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.step_count += 1
        return float(loss.detach())


def adam_step(state: OptimizerState, param: Tensor, grad: Tensor) -> Tensor:
    """One bias-corrected Adam update of ``param`` (a parameter registered in ``state``)."""
    if state.kind is not OptimizerKind.ADAM:
        raise ValueError(f"adam_step needs an adam optimizer state, got {state.kind.value}")
    if tuple(grad.shape) != tuple(param.shape):
        raise ShapeError(f"gradient shape {tuple(grad.shape)} != parameter shape {tuple(param.shape)}")
    grads = [grad if p is param else None for p in state.params]
    if all(g is None for g in grads):
        raise ValueError("parameter is not tracked by this optimizer state")
    state.apply(grads)
    return param


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


def topk_mask(values: Tensor, k: int) -> Tensor:
    """Keep the ``k`` largest entries along the last dim, zero the rest.

    Ties go to the lowest index (stable descending sort). The mask is a
    constant, so gradients reach kept entries unchanged and nothing else.
    """
    dim = values.shape[-1]
    if not 1 <= int(k) <= dim:
        raise ValueError(f"K must lie in [1, {dim}], got {k}")
    order = torch.sort(values.detach(), dim=-1, descending=True, stable=True).indices[..., : int(k)]
    mask = torch.zeros_like(values).scatter(-1, order, 1.0)
    return values * mask


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


def minibatch_indices(n: int, batch_size: int, generator: torch.Generator, drop_singleton: bool = False) -> List[Tensor]:
    """Shuffled index batches covering ``range(n)`` once."""
    if n < 1:
        raise ValueError("cannot batch an empty dataset")
    order = torch.randperm(n, generator=generator)
    batches = list(torch.split(order, max(1, int(batch_size))))
    if drop_singleton and len(batches) > 1 and len(batches[-1]) < 2:
        batches = batches[:-1]
    return batches


def seeded_module(factory, seed: int):
    """Build a module with parameters drawn from ``seed`` without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return factory()
