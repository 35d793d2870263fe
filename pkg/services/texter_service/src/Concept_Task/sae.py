#!/usr/bin/env python3.10
import math
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import torch
from torch import nn

from common_utilities import LOGGER, LOG_LEVEL, resolve_logger

from ..Classification_Task.checkpoint import load_checkpoint, load_state, save_module
from ..errors import ShapeError
from ..numerics import OptimizerState, minibatch_indices, seeded_generator, seeded_module, topk_mask


class SparseAutoencoder(nn.Module):
    """TopK autoencoder: code = TopK(W_enc (z - b_pre)), reconstruction = W_dec code.

    Decoder columns are kept at unit norm; decode adds no bias.
    """

    def __init__(self, feature_dim: int, expansion: int = 8, topk_ratio: float = 0.10, k: int = None):
        super().__init__()
        if expansion < 1:
            raise ValueError(f"expansion must be >= 1, got {expansion}")
        self.feature_dim = feature_dim
        self.dict_dim = expansion * feature_dim
        self.expansion = expansion
        self.k = int(k) if k is not None else max(1, math.ceil(topk_ratio * self.dict_dim))
        if not 1 <= self.k <= self.dict_dim:
            raise ValueError(f"K must lie in [1, {self.dict_dim}], got {self.k}")
        decoder = torch.randn(feature_dim, self.dict_dim)
        decoder = decoder / decoder.norm(dim=0, keepdim=True)
        self.W_dec = nn.Parameter(decoder)
        self.W_enc = nn.Parameter(decoder.T.clone())
        self.b_pre = nn.Parameter(torch.zeros(feature_dim))
        self.metadata: Dict[str, Any] = {}

    @property
    def architecture(self) -> Dict[str, Any]:
        return {"kind": "sae", "feature_dim": self.feature_dim, "expansion": self.expansion, "k": self.k}

    def _check(self, tensor: torch.Tensor, dim: int, what: str) -> None:
        if tensor.shape[-1] != dim:
            raise ShapeError(f"{what} has trailing dim {tensor.shape[-1]}, expected {dim}")

    def pre_activation(self, features: torch.Tensor) -> torch.Tensor:
        self._check(features, self.feature_dim, "feature")
        return (features - self.b_pre) @ self.W_enc.T

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        return topk_mask(self.pre_activation(features), self.k)

    def decode(self, code: torch.Tensor) -> torch.Tensor:
        self._check(code, self.dict_dim, "code")
        return code @ self.W_dec.T

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(features))

    @torch.no_grad()
    def normalize_decoder(self) -> None:
        self.W_dec.div_(self.W_dec.norm(dim=0, keepdim=True).clamp_min(1e-12))

    def save(self, path: Union[str, Path]) -> Path:
        return save_module(path, self, self.architecture, self.metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SparseAutoencoder":
        architecture, tensors, metadata = load_checkpoint(path)
        sae = cls(architecture["feature_dim"], expansion=architecture["expansion"], k=architecture["k"])
        load_state(sae, tensors).eval()
        sae.metadata = metadata
        return sae


def encode(sae: SparseAutoencoder, features: torch.Tensor) -> torch.Tensor:
    return sae.encode(features)


def decode(sae: SparseAutoencoder, code: torch.Tensor) -> torch.Tensor:
    return sae.decode(code)


def reconstruction_mse(sae: SparseAutoencoder, features: torch.Tensor) -> float:
    with torch.no_grad():
        return float(((sae(features) - features) ** 2).mean())


def train_sae(features: torch.Tensor, config, seed: int,
              logger: Union[LOGGER, str, None] = None) -> Tuple[SparseAutoencoder, List[float]]:
    """Fit a TopK SAE on precomputed ``features`` (N x feature_dim); returns the SAE and per-epoch MSE."""
    logs = resolve_logger(logger)
    features = features.detach().to(torch.float32)
    if features.dim() != 2 or len(features) == 0:
        raise ShapeError(f"train_sae expects a nonempty N x D feature matrix, got {tuple(features.shape)}")
    sae = seeded_module(lambda: SparseAutoencoder(features.shape[1], config.expansion, config.topk_ratio), seed)
    with torch.no_grad():
        sae.b_pre.copy_(features.mean(dim=0))
    batch_size = min(int(config.batch_size), len(features))
    generator = seeded_generator(seed)
    optimizer = OptimizerState(sae.parameters(), kind="adam", lr=config.lr, stage="train-sae")
    logs.write_logs(f"Training SAE: dict {sae.dict_dim}, K={sae.k}, batch {batch_size}, {config.epochs} epochs", LOG_LEVEL.INFO)
    losses = []
    for epoch in range(config.epochs):
        total = 0.0
        for batch in minibatch_indices(len(features), batch_size, generator):
            chunk = features[batch]
            loss = ((sae(chunk) - chunk) ** 2).sum(dim=1).mean()
            total += optimizer.minimize(loss) * len(batch)
            sae.normalize_decoder()
        losses.append(total / (len(features) * features.shape[1]))
        logs.write_logs(f"[train-sae] epoch {epoch + 1}/{config.epochs} mse={losses[-1]:.6e}", LOG_LEVEL.DEBUG)
    sae.eval()
    sae.metadata = {"seed": seed, "epochs": config.epochs, "losses": losses, "batch_size": batch_size}
    return sae, losses
