#!/usr/bin/env python3.10
"""Two-tower joint image/text embedder trained with a symmetric contrastive loss."""

import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from common_utilities import LOGGER, LOG_LEVEL, resolve_logger

from ..numerics import OptimizerState, minibatch_indices, seeded_generator, seeded_module
from .checkpoint import load_checkpoint, load_state, save_module
from .classifier import images_to_batch

UNKNOWN_TOKEN = "<unk>"
_PUNCTUATION = re.compile(r"[^\w\s]")


def tokenize(text: str) -> List[str]:
    return _PUNCTUATION.sub(" ", text.lower()).split()


class Vocabulary:
    """Token -> index map; index 0 is the reserved unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: List[str] = [UNKNOWN_TOKEN]
        self.index: Dict[str, int] = {UNKNOWN_TOKEN: 0}
        for token in tokens:
            self.add(token)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        tokens = sorted({token for text in texts for token in tokenize(text)})
        return cls(tokens)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def encode(self, text: str) -> List[int]:
        ids = [self.index.get(token, 0) for token in tokenize(text)]
        return ids or [0]

    def __len__(self) -> int:
        return len(self.tokens)


class JointEmbedder(nn.Module):
    def __init__(self, vocabulary: Vocabulary, joint_dim: int = 32, token_dim: int = 32,
                 hidden_dim: int = 64, temperature: float = 0.07):
        super().__init__()
        if len(vocabulary) < 2:
            raise ValueError("JointEmbedder needs a vocabulary with at least one real token")
        if temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.vocabulary = vocabulary
        self.joint_dim = joint_dim
        self.token_dim = token_dim
        self.hidden_dim = hidden_dim
        self.temperature = temperature
        self.image_tower = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, kernel_size=3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(32, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, joint_dim),
        )
        self.token_embedding = nn.EmbeddingBag(len(vocabulary), token_dim, mode="mean")
        self.text_tower = nn.Sequential(nn.Linear(token_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, joint_dim))
        self.metadata: Dict[str, Any] = {}

    @property
    def architecture(self) -> Dict[str, Any]:
        return {
            "kind": "embedder", "joint_dim": self.joint_dim, "token_dim": self.token_dim,
            "hidden_dim": self.hidden_dim, "temperature": self.temperature,
            "vocabulary": list(self.vocabulary.tokens),
        }

    def encode_images(self, images) -> torch.Tensor:
        return F.normalize(self.image_tower(images_to_batch(images)), dim=-1)

    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        ids, offsets = [], []
        for text in texts:
            offsets.append(len(ids))
            ids.extend(self.vocabulary.encode(text))
        bags = self.token_embedding(torch.as_tensor(ids, dtype=torch.long), torch.as_tensor(offsets, dtype=torch.long))
        return F.normalize(self.text_tower(bags), dim=-1)

    def save(self, path: Union[str, Path]) -> Path:
        return save_module(path, self, self.architecture, self.metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "JointEmbedder":
        architecture, tensors, metadata = load_checkpoint(path)
        model = cls(
            Vocabulary(architecture["vocabulary"][1:]), joint_dim=architecture["joint_dim"],
            token_dim=architecture["token_dim"], hidden_dim=architecture["hidden_dim"],
            temperature=architecture["temperature"],
        )
        load_state(model, tensors).eval()
        model.metadata = metadata
        return model


@torch.no_grad()
def embed_texts(embedder: JointEmbedder, texts: Sequence[str]) -> torch.Tensor:
    return embedder.encode_texts(texts)


@torch.no_grad()
def embed_images(embedder: JointEmbedder, images) -> torch.Tensor:
    return embedder.encode_images(images)


def contrastive_loss(image_vecs: torch.Tensor, text_vecs: torch.Tensor, match: torch.Tensor,
                     temperature: float) -> torch.Tensor:
    """Symmetric cross-entropy over in-batch similarities.

    ``match[i, j]`` is 1 when text ``j`` describes image ``i``; each row (and
    column) is normalised into a target distribution, so every caption an
    image carries counts as a positive.
    """
    logits = image_vecs @ text_vecs.T / temperature
    image_targets = match / match.sum(dim=1, keepdim=True)
    text_targets = match.T / match.T.sum(dim=1, keepdim=True)
    return 0.5 * (F.cross_entropy(logits, image_targets) + F.cross_entropy(logits.T, text_targets))


def caption_pairs(samples: Sequence) -> List[Tuple[int, str]]:
    return [(row, caption) for row, sample in enumerate(samples) for caption in sample.captions]


def train_embedder(samples: Sequence, config, seed: int, extra_texts: Iterable[str] = (),
                   logger: Union[LOGGER, str, None] = None) -> Tuple[JointEmbedder, List[float]]:
    """Train both towers on every (image, caption) pair of ``samples``.

    ``extra_texts`` (e.g. the concept bank) only widen the vocabulary.
    """
    logs = resolve_logger(logger)
    pairs = caption_pairs(samples)
    vocabulary = Vocabulary.build([caption for _, caption in pairs] + list(extra_texts))
    if len(vocabulary) < 2:
        raise ValueError("train_embedder found no caption tokens (empty vocabulary)")
    if len(pairs) < 2:
        raise ValueError("train_embedder needs at least 2 (image, caption) pairs")
    embedder = seeded_module(lambda: JointEmbedder(
        vocabulary, joint_dim=config.joint_dim, token_dim=config.token_dim,
        hidden_dim=config.hidden_dim, temperature=config.temperature,
    ), seed)
    images = images_to_batch(samples)
    caption_sets = [set(sample.captions) for sample in samples]
    generator = seeded_generator(seed)
    optimizer = OptimizerState(embedder.parameters(), kind="adam", lr=config.lr, stage="train-embedder")
    logs.write_logs(f"Training joint embedder on {len(pairs)} pairs, vocabulary {len(vocabulary)}", LOG_LEVEL.INFO)
    losses = []
    embedder.train()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for batch in minibatch_indices(len(pairs), config.batch_size, generator, drop_singleton=True):
            rows = [pairs[i][0] for i in batch.tolist()]
            texts = [pairs[i][1] for i in batch.tolist()]
            match = torch.as_tensor(
                [[1.0 if text in caption_sets[row] else 0.0 for text in texts] for row in rows],
                dtype=torch.float32,
            )
            loss = contrastive_loss(embedder.encode_images(images[rows]), embedder.encode_texts(texts),
                                    match, embedder.temperature)
            total += optimizer.minimize(loss) * len(rows)
            count += len(rows)
        losses.append(total / count)
        logs.write_logs(f"[train-embedder] epoch {epoch + 1}/{config.epochs} loss={losses[-1]:.6f}", LOG_LEVEL.DEBUG)
    embedder.eval()
    embedder.metadata = {"seed": seed, "epochs": config.epochs, "losses": losses}
    return embedder, losses


def retrieval_top1(embedder: JointEmbedder, samples: Sequence, phrases: Sequence[str]) -> float:
    """Fraction of samples whose most similar phrase is one of their own captions."""
    similarity = embed_images(embedder, samples) @ embed_texts(embedder, phrases).T
    best = similarity.argmax(dim=1).tolist()
    hits = [phrases[j] in set(sample.captions) for j, sample in zip(best, samples)]
    return float(np.mean(hits)) if hits else 0.0
