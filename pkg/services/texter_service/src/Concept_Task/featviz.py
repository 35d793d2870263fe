#!/usr/bin/env python3.10
"""
Concept-image synthesis under a fixed Fourier magnitude.

Each colour channel is ``idft2(magnitude * exp(i * phase))`` where only the
phase is trained. The free phase field is anti-symmetrised on the DFT grid so
the spectrum stays Hermitian: the pre-squash image is real and its magnitude
spectrum equals the fixed one at every iteration. Pixels are then squashed
into [0, 1] by ``sigmoid(4 (x - 0.5))``.

Objective (maximised): sum of the selected neurons' activations minus
``reg_weight`` times the total variation of the squashed image.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from common_utilities import LOGGER, LOG_LEVEL, resolve_logger, write_json, write_ppm
from utilities.Datatypes import FeatureSpace, MagnitudeSource
from utilities.request_models import ConceptImageSidecar

from ..numerics import DTYPE, ComplexGrid, OptimizerState, backward, check_finite, dft2, hermitian_phase, idft2, seeded_generator, topk_mask
from .attribution import NeuronSelection

SQUASH_GAIN = 4.0
ANALYTIC_DC_MEAN = 0.5
ANALYTIC_AMPLITUDE = 0.08


@dataclass(frozen=True)
class VizConfig:
    iterations: int = 512
    lr: float = 0.05
    reg_weight: float = 1e-3
    magnitude_source: MagnitudeSource = MagnitudeSource.ANALYTIC
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.reg_weight < 0.0:
            raise ValueError(f"reg_weight must be >= 0, got {self.reg_weight}")

    def to_dict(self) -> Dict[str, Any]:
        return {"iterations": self.iterations, "lr": self.lr, "reg_weight": self.reg_weight,
                "magnitude_source": self.magnitude_source.value, "seed": self.seed}


@dataclass
class ConceptImage:
    pixels: np.ndarray
    target_class: int
    neurons: List[int]
    space: FeatureSpace
    trace: List[float]
    best_iteration: int
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def criterion(self) -> float:
        return self.trace[self.best_iteration]


def squash(pre_squash: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(SQUASH_GAIN * (pre_squash - 0.5))


def total_variation(image: torch.Tensor) -> torch.Tensor:
    """Mean absolute neighbour difference along both spatial axes of a (..., H, W) tensor."""
    dy = (image[..., 1:, :] - image[..., :-1, :]).abs().mean() if image.shape[-2] > 1 else image.new_zeros(())
    dx = (image[..., :, 1:] - image[..., :, :-1]).abs().mean() if image.shape[-1] > 1 else image.new_zeros(())
    return dy + dx


class FourierImage:
    """Phase-only image parameterisation over a fixed (3, H, W) magnitude."""

    def __init__(self, magnitude: torch.Tensor, seed: int = 0):
        magnitude = torch.as_tensor(magnitude).detach().to(DTYPE)
        if magnitude.dim() != 3:
            raise ValueError(f"magnitude must be (channels, H, W), got {tuple(magnitude.shape)}")
        self.magnitude = magnitude
        generator = seeded_generator(seed)
        initial = (torch.rand(magnitude.shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * math.pi
        self.phase = initial.requires_grad_(True)

    def spectrum(self) -> ComplexGrid:
        return ComplexGrid.from_polar(self.magnitude, hermitian_phase(self.phase))

    def pre_squash(self) -> torch.Tensor:
        return idft2(self.spectrum())

    def image(self) -> torch.Tensor:
        """(1, 3, H, W) float64 image in [0, 1]."""
        return squash(self.pre_squash()).unsqueeze(0)


def mean_magnitude_spectrum(images: Sequence) -> torch.Tensor:
    """Element-wise mean of |dft2| per channel over ``images`` (H x W x 3 arrays or samples), in order."""
    if len(images) == 0:
        raise ValueError("mean_magnitude_spectrum needs a nonempty dataset")
    total = None
    for item in images:
        array = np.asarray(getattr(item, "image", item), dtype=np.float64)
        channels = torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))
        magnitude = dft2(channels).magnitude()
        total = magnitude if total is None else total + magnitude
    return total / len(images)


def analytic_magnitude(side: int, channels: int = 3) -> torch.Tensor:
    """1/f magnitude, symmetric under k -> -k, with a DC term giving mean intensity 0.5."""
    k = torch.arange(side, dtype=DTYPE)
    folded = torch.minimum(k, side - k)
    radius = torch.sqrt(folded[:, None] ** 2 + folded[None, :] ** 2)
    magnitude = (side * side * ANALYTIC_AMPLITUDE) / radius.clamp_min(1.0)
    magnitude[0, 0] = side * side * ANALYTIC_DC_MEAN
    return magnitude.expand(channels, side, side).clone()


def neuron_criterion(classifier, images: torch.Tensor, neurons: Sequence[int], sae=None) -> torch.Tensor:
    """Summed activation of ``neurons`` in raw-feature or SAE-code space.

    In SAE space the TopK mask has no gradient for neurons outside the top K,
    so the returned value carries the masked activation while its gradient is
    that of the pre-activations.
    """
    features = classifier.features(images.to(torch.float32)).to(DTYPE)
    index = torch.as_tensor(list(neurons), dtype=torch.long)
    if sae is None:
        return features[:, index].sum()
    pre = sae.pre_activation(features.to(torch.float32)).to(DTYPE)
    masked = topk_mask(pre, sae.k)[:, index].sum()
    surrogate = pre[:, index].sum()
    return surrogate + (masked - surrogate).detach()


def synthesize(classifier, selection: NeuronSelection, magnitude: torch.Tensor, config: VizConfig,
               sae=None, on_iteration: Optional[Callable[[int, torch.Tensor], None]] = None,
               logger: Union[LOGGER, str, None] = None) -> ConceptImage:
    """Maximise the selected neurons' activation over the phase; return the best iterate."""
    logs = resolve_logger(logger)
    space = FeatureSpace.SAE if sae is not None else FeatureSpace.RAW
    if space is not selection.space:
        raise ValueError(f"selection was made in {selection.space.value} space but synthesis runs in {space.value}")
    limit = sae.dict_dim if sae is not None else classifier.feature_dim
    if any(not 0 <= j < limit for j in selection.indices):
        raise ValueError(f"neuron index outside [0, {limit}) in {selection.indices}")
    param = FourierImage(magnitude, seed=config.seed)
    optimizer = OptimizerState([param.phase], kind="adam", lr=config.lr, stage="featviz")
    trace: List[float] = []
    best_iteration, best_pixels = 0, None
    for iteration in range(config.iterations):
        pre = param.pre_squash()
        if on_iteration is not None:
            on_iteration(iteration, pre.detach())
        image = squash(pre).unsqueeze(0)
        criterion = neuron_criterion(classifier, image, selection.indices, sae)
        objective = criterion - config.reg_weight * total_variation(image)
        check_finite(objective.detach(), "featviz", iteration)
        value = float(criterion.detach())
        trace.append(value)
        if value >= trace[best_iteration]:
            best_iteration, best_pixels = iteration, image.detach()[0].permute(1, 2, 0).numpy().copy()
        if iteration < config.iterations - 1:
            optimizer.apply(backward(-objective, [param.phase]))
    logs.write_logs(
        f"Concept image for class {selection.target_class}: criterion {trace[0]:.4f} -> {trace[best_iteration]:.4f} "
        f"(best iteration {best_iteration})", LOG_LEVEL.DEBUG,
    )
    return ConceptImage(
        pixels=best_pixels.astype(np.float32),
        target_class=selection.target_class,
        neurons=list(selection.indices),
        space=space,
        trace=trace,
        best_iteration=best_iteration,
        config=config.to_dict(),
    )


def export_concept_image(concept: ConceptImage, directory: Union[str, Path], stem: str) -> Path:
    """Write ``<stem>.ppm`` and ``<stem>.json``; returns the PPM path."""
    directory = Path(directory)
    ppm_path = directory / f"{stem}.ppm"
    write_ppm(concept.pixels, ppm_path)
    sidecar = ConceptImageSidecar(
        class_id=concept.target_class, neurons=concept.neurons, space=concept.space.value,
        config=concept.config, final_criterion=concept.criterion, best_iteration=concept.best_iteration,
    )
    write_json({**sidecar.model_dump(by_alias=True), "trace": concept.trace}, directory / f"{stem}.json")
    return ppm_path
