#!/usr/bin/env python3.10
"""
Integrated-gradients scores over the classifier's feature vector (raw) or over
the SAE code (the SAE decoder is then treated as part of the classifier head).

    s_j = (z_j - z'_j) * 1/M * sum_{m=1..M} dF_c(z' + m/M (z - z')) / dz_j

The path sum uses the right endpoint of each step and is accumulated in
ascending ``m`` in float64.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import torch

from utilities.Datatypes import FeatureSpace

from ..errors import ShapeError
from ..numerics import DTYPE, backward, check_finite

Head = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class AttributionConfig:
    steps: int = 100
    k_neu: int = 6
    space: FeatureSpace = FeatureSpace.RAW
    baseline: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.k_neu < 1:
            raise ValueError(f"k_neu must be >= 1, got {self.k_neu}")


@dataclass
class NeuronSelection:
    target_class: int
    indices: List[int]
    scores: torch.Tensor
    space: FeatureSpace = FeatureSpace.RAW

    def to_dict(self) -> dict:
        return {"class": self.target_class, "neurons": list(self.indices), "space": self.space.value,
                "scores": [float(s) for s in self.scores.tolist()]}


def class_logit_head(classifier, target_class: int, sae=None) -> Head:
    """F_c over raw features, or over SAE codes via g(W_dec code) when ``sae`` is given."""
    if not 0 <= target_class < classifier.n_classes:
        raise ValueError(f"class {target_class} outside [0, {classifier.n_classes})")
    weight = classifier.head.weight.detach().to(DTYPE)[target_class]
    bias = classifier.head.bias.detach().to(DTYPE)[target_class]
    if sae is None:
        return lambda z: z @ weight + bias
    decoder = sae.W_dec.detach().to(DTYPE)
    return lambda code: (code @ decoder.T) @ weight + bias


def integrated_gradients(head: Head, z: torch.Tensor, steps: int = 100,
                         baseline: Optional[torch.Tensor] = None) -> torch.Tensor:
    z = torch.as_tensor(z).detach().to(DTYPE).flatten()
    baseline = torch.zeros_like(z) if baseline is None else torch.as_tensor(baseline).detach().to(DTYPE).flatten()
    if baseline.shape != z.shape:
        raise ShapeError(f"baseline shape {tuple(baseline.shape)} != feature shape {tuple(z.shape)}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    delta = z - baseline
    total = torch.zeros_like(z)
    for m in range(1, steps + 1):
        point = (baseline + (m / steps) * delta).requires_grad_(True)
        (grad,) = backward(head(point).sum(), [point])
        total = total + grad
    scores = delta * total / steps
    return check_finite(scores, "attribution")


def select_top_neurons(scores: torch.Tensor, k_neu: int, target_class: int = 0,
                       space: FeatureSpace = FeatureSpace.RAW) -> NeuronSelection:
    scores = torch.as_tensor(scores).detach().flatten()
    if not 1 <= k_neu <= scores.numel():
        raise ValueError(f"k_neu must lie in [1, {scores.numel()}], got {k_neu}")
    order = torch.sort(scores, descending=True, stable=True).indices[:k_neu]
    return NeuronSelection(target_class=target_class, indices=order.tolist(), scores=scores, space=space)


def attribute(classifier, feature: torch.Tensor, target_class: int, config: AttributionConfig,
              sae=None) -> NeuronSelection:
    """Score one image's feature vector for ``target_class`` and keep the top ``k_neu`` neurons."""
    if config.space is FeatureSpace.SAE:
        if sae is None:
            raise ValueError("SAE space requested without an SAE")
        with torch.no_grad():
            point = sae.encode(feature.to(torch.float32)).to(DTYPE)
        head = class_logit_head(classifier, target_class, sae)
    else:
        point = feature.detach().to(DTYPE)
        head = class_logit_head(classifier, target_class)
    scores = integrated_gradients(head, point, config.steps, config.baseline)
    return select_top_neurons(scores, config.k_neu, target_class, config.space)
