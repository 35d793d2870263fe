#!/usr/bin/env python3.10
import copy
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from common_utilities import LOGGER, LOG_LEVEL, resolve_logger

from ..numerics import OptimizerState, minibatch_indices, seeded_generator, seeded_module
from .checkpoint import load_checkpoint, load_state, save_module


def images_to_batch(images: Union[Sequence, np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Samples, H x W x 3 arrays or an N x H x W x 3 stack -> float32 N x 3 x H x W."""
    if isinstance(images, torch.Tensor):
        return images.to(torch.float32)
    if isinstance(images, np.ndarray):
        stack = images[None] if images.ndim == 3 else images
    else:
        stack = np.stack([getattr(item, "image", item) for item in images])
    return torch.from_numpy(np.ascontiguousarray(stack, dtype=np.float32)).permute(0, 3, 1, 2).contiguous()


class ConvEncoder(nn.Module):
    def __init__(self, feature_dim: int = 64):
        super().__init__()
        self.blocks = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, kernel_size=3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        )
        self.project = nn.Linear(32, feature_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        pooled = self.blocks(images).mean(dim=(2, 3))
        return F.relu(self.project(pooled))


class MLPEncoder(nn.Module):
    def __init__(self, side: int, feature_dim: int = 64, hidden_dim: int = 128):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Flatten(), nn.Linear(3 * side * side, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, feature_dim), nn.ReLU(),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.layers(images)


class ClassifierModel(nn.Module):
    """Encoder ``f`` (image -> features) followed by an affine head ``g`` (features -> logits)."""

    def __init__(self, n_classes: int, side: int = 32, feature_dim: int = 64, encoder: str = "cnn",
                 multilabel: bool = False, threshold: float = 0.3):
        super().__init__()
        if encoder == "cnn":
            self.encoder = ConvEncoder(feature_dim)
        elif encoder == "mlp":
            self.encoder = MLPEncoder(side, feature_dim)
        else:
            raise ValueError(f"Unknown encoder architecture '{encoder}'")
        self.head = nn.Linear(feature_dim, n_classes)
        self.n_classes = n_classes
        self.side = side
        self.feature_dim = feature_dim
        self.encoder_kind = encoder
        self.multilabel = multilabel
        self.threshold = threshold
        self.metadata: Dict[str, Any] = {}

    @property
    def architecture(self) -> Dict[str, Any]:
        return {
            "kind": "classifier", "encoder": self.encoder_kind, "n_classes": self.n_classes,
            "side": self.side, "feature_dim": self.feature_dim,
            "multilabel": self.multilabel, "threshold": self.threshold,
        }

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images)

    def logits_from_features(self, features: torch.Tensor) -> torch.Tensor:
        return self.head(features)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(images))

    def save(self, path: Union[str, Path]) -> Path:
        return save_module(path, self, self.architecture, self.metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClassifierModel":
        architecture, tensors, metadata = load_checkpoint(path)
        model = cls(
            n_classes=architecture["n_classes"], side=architecture["side"],
            feature_dim=architecture["feature_dim"], encoder=architecture["encoder"],
            multilabel=architecture["multilabel"], threshold=architecture["threshold"],
        )
        load_state(model, tensors).eval()
        model.metadata = metadata
        return model


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
@torch.no_grad()
def predict_proba(model: ClassifierModel, images) -> np.ndarray:
    logits = model(images_to_batch(images)).to(torch.float64)
    if model.multilabel:
        return torch.sigmoid(logits).numpy()
    return torch.softmax(logits, dim=1).numpy()


@torch.no_grad()
def predict(model: ClassifierModel, images) -> np.ndarray:
    return model(images_to_batch(images)).argmax(dim=1).numpy()


@torch.no_grad()
def predict_multilabel(model: ClassifierModel, images, threshold: float = None) -> List[List[int]]:
    """Per image, the classes whose sigmoid probability exceeds ``threshold``."""
    threshold = model.threshold if threshold is None else threshold
    probabilities = torch.sigmoid(model(images_to_batch(images)).to(torch.float64))
    return [torch.nonzero(row > threshold).flatten().tolist() for row in probabilities]


def accuracy(model: ClassifierModel, samples: Sequence) -> float:
    if not samples:
        return 0.0
    labels = np.asarray([sample.label for sample in samples])
    return float((predict(model, samples) == labels).mean())


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def _train_loop(model: nn.Module, params, inputs: torch.Tensor, targets: torch.Tensor, loss_fn,
                epochs: int, lr: float, batch_size: int, seed: int, stage: str, logs: LOGGER) -> List[float]:
    generator = seeded_generator(seed)
    optimizer = OptimizerState(params, kind="adam", lr=lr, stage=stage)
    losses = []
    model.train()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for batch in minibatch_indices(len(inputs), batch_size, generator):
            loss = loss_fn(model(inputs[batch]), targets[batch])
            total += optimizer.minimize(loss) * len(batch)
            count += len(batch)
        losses.append(total / count)
        logs.write_logs(f"[{stage}] epoch {epoch + 1}/{epochs} loss={losses[-1]:.6f}", LOG_LEVEL.DEBUG)
    model.eval()
    return losses


def train_classifier(samples: Sequence, config, seed: int, n_classes: int,
                     logger: Union[LOGGER, str, None] = None) -> Tuple[ClassifierModel, List[float]]:
    """Train ``g o f`` with cross-entropy; returns the model and its per-epoch loss curve."""
    logs = resolve_logger(logger)
    if not samples:
        raise ValueError("train_classifier needs a nonempty dataset")
    inputs = images_to_batch(samples)
    targets = torch.as_tensor([sample.label for sample in samples], dtype=torch.long)
    model = seeded_module(lambda: ClassifierModel(
        n_classes=n_classes, side=inputs.shape[-1], feature_dim=config.feature_dim,
        encoder=config.architecture, threshold=config.multilabel_threshold,
    ), seed)
    logs.write_logs(f"Training classifier ({config.architecture}) on {len(samples)} samples for {config.epochs} epochs", LOG_LEVEL.INFO)
    losses = _train_loop(model, model.parameters(), inputs, targets, F.cross_entropy, config.epochs,
                         config.lr, config.batch_size, seed, "train-classifier", logs)
    model.metadata = {"seed": seed, "epochs": config.epochs, "losses": losses,
                      "train_accuracy": accuracy(model, samples)}
    logs.write_logs(f"Classifier train accuracy {model.metadata['train_accuracy']:.4f}", LOG_LEVEL.INFO)
    return model, losses


def finetune_multilabel_head(model: ClassifierModel, samples: Sequence, threshold: float = 0.3,
                             epochs: int = 10, lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
                             logger: Union[LOGGER, str, None] = None) -> Tuple[ClassifierModel, List[float]]:
    """Copy ``model``, freeze its encoder and retrain only the head with per-class BCE."""
    logs = resolve_logger(logger)
    tuned = copy.deepcopy(model)
    for param in tuned.encoder.parameters():
        param.requires_grad_(False)
    inputs = images_to_batch(samples)
    targets = torch.zeros(len(samples), model.n_classes, dtype=torch.float32)
    for row, sample in enumerate(samples):
        targets[row, list(sample.labels)] = 1.0
    losses = _train_loop(tuned, tuned.head.parameters(), inputs, targets, F.binary_cross_entropy_with_logits,
                         epochs, lr, batch_size, seed, "finetune-multilabel", logs)
    tuned.multilabel = True
    tuned.threshold = threshold
    tuned.metadata = {**model.metadata, "multilabel_epochs": epochs, "multilabel_losses": losses}
    return tuned, losses
