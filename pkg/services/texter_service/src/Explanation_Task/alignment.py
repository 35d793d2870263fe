#!/usr/bin/env python3.10
import math
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import torch
from torch import nn

from common_utilities import LOGGER, LOG_LEVEL, resolve_logger
from utilities.Datatypes import AlignMethod

from ..Classification_Task.checkpoint import load_checkpoint, load_state, save_module
from ..Classification_Task.classifier import images_to_batch
from ..errors import ShapeError
from ..numerics import DTYPE, OptimizerState, check_finite, seeded_generator


class Aligner(nn.Module):
    """Affine map h(z) = W z + b from classifier features into the joint space (float64)."""

    def __init__(self, feature_dim: int, joint_dim: int):
        super().__init__()
        self.W = nn.Parameter(torch.zeros(joint_dim, feature_dim, dtype=DTYPE))
        self.b = nn.Parameter(torch.zeros(joint_dim, dtype=DTYPE))
        self.residual = 0.0
        self.fraction = 1.0
        self.method = AlignMethod.CLOSED_FORM
        self.metadata: Dict[str, Any] = {}

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.W.shape[0]

    @property
    def architecture(self) -> Dict[str, Any]:
        return {"kind": "aligner", "feature_dim": self.feature_dim, "joint_dim": self.joint_dim,
                "method": self.method.value, "fraction": self.fraction, "residual": self.residual}

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        features = torch.as_tensor(features).to(DTYPE)
        if features.shape[-1] != self.feature_dim:
            raise ShapeError(f"aligner expects features of dim {self.feature_dim}, got {features.shape[-1]}")
        return features @ self.W.T + self.b

    def save(self, path: Union[str, Path]) -> Path:
        return save_module(path, self, self.architecture, self.metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Aligner":
        architecture, tensors, metadata = load_checkpoint(path)
        aligner = cls(architecture["feature_dim"], architecture["joint_dim"])
        load_state(aligner, tensors).eval()
        aligner.method = AlignMethod(architecture["method"])
        aligner.fraction = architecture["fraction"]
        aligner.residual = architecture["residual"]
        aligner.metadata = metadata
        return aligner


@torch.no_grad()
def align(aligner: Aligner, features: torch.Tensor) -> torch.Tensor:
    return aligner(features)


def alignment_loss(W: torch.Tensor, b: torch.Tensor, X: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    """Mean over samples of ||W x + b - y||^2."""
    return ((X @ W.T + b - Y) ** 2).sum(dim=1).mean()


def solve_closed_form(X: torch.Tensor, Y: torch.Tensor, ridge: float = 1e-6) -> Tuple[torch.Tensor, torch.Tensor]:
    """Ridge normal equations on centred data: (Xc^T Xc + ridge I) W^T = Xc^T Yc, b = mean(Y) - W mean(X)."""
    X, Y = X.to(DTYPE), Y.to(DTYPE)
    x_mean, y_mean = X.mean(dim=0), Y.mean(dim=0)
    Xc, Yc = X - x_mean, Y - y_mean
    gram = Xc.T @ Xc + ridge * torch.eye(X.shape[1], dtype=DTYPE)
    W = torch.linalg.solve(gram, Xc.T @ Yc).T
    b = y_mean - W @ x_mean
    return check_finite(W, "train-aligner"), check_finite(b, "train-aligner")


def solve_sgd(X: torch.Tensor, Y: torch.Tensor, steps: int = 2000, lr: float = 1e-2) -> Tuple[torch.Tensor, torch.Tensor]:
    X, Y = X.to(DTYPE), Y.to(DTYPE)
    W = torch.zeros(Y.shape[1], X.shape[1], dtype=DTYPE, requires_grad=True)
    b = torch.zeros(Y.shape[1], dtype=DTYPE, requires_grad=True)
    optimizer = OptimizerState([W, b], kind="adam", lr=lr, stage="train-aligner")
    for _ in range(steps):
        optimizer.minimize(alignment_loss(W, b, X, Y))
    return W.detach(), b.detach()


def fit_aligner(X: torch.Tensor, Y: torch.Tensor, method: Union[str, AlignMethod] = AlignMethod.CLOSED_FORM,
                ridge: float = 1e-6, sgd_steps: int = 2000, sgd_lr: float = 1e-2) -> Aligner:
    if X.dim() != 2 or Y.dim() != 2 or len(X) != len(Y) or len(X) == 0:
        raise ShapeError(f"fit_aligner needs matching nonempty N x D inputs, got {tuple(X.shape)} and {tuple(Y.shape)}")
    method = AlignMethod(method)
    if method is AlignMethod.CLOSED_FORM:
        W, b = solve_closed_form(X, Y, ridge)
    else:
        W, b = solve_sgd(X, Y, sgd_steps, sgd_lr)
    aligner = Aligner(X.shape[1], Y.shape[1])
    with torch.no_grad():
        aligner.W.copy_(W)
        aligner.b.copy_(b)
        aligner.residual = float(alignment_loss(aligner.W, aligner.b, X.to(DTYPE), Y.to(DTYPE)))
    aligner.method = method
    return aligner


@torch.no_grad()
def alignment_pairs(classifier, embedder, samples) -> Tuple[torch.Tensor, torch.Tensor]:
    images = images_to_batch(samples)
    return classifier.features(images).to(DTYPE), embedder.encode_images(images).to(DTYPE)


def train_aligner(classifier, embedder, samples, config, seed: int,
                  logger: Union[LOGGER, str, None] = None) -> Aligner:
    """Fit h on a seeded ``config.fraction`` subset of ``samples``."""
    logs = resolve_logger(logger)
    if not samples:
        raise ValueError("train_aligner needs a nonempty dataset")
    count = max(1, math.ceil(config.fraction * len(samples)))
    subset = torch.randperm(len(samples), generator=seeded_generator(seed))[:count]
    chosen = [samples[i] for i in sorted(subset.tolist())]
    X, Y = alignment_pairs(classifier, embedder, chosen)
    aligner = fit_aligner(X, Y, config.method, config.ridge, config.sgd_steps, config.sgd_lr)
    aligner.fraction = config.fraction
    aligner.metadata = {"seed": seed, "n_pairs": count, "residual": aligner.residual}
    logs.write_logs(f"Aligner ({aligner.method.value}) fit on {count} pairs, residual {aligner.residual:.6e}", LOG_LEVEL.INFO)
    return aligner
