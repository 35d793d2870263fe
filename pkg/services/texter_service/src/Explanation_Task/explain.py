#!/usr/bin/env python3.10
"""
Concept image -> patches -> aligned features -> ranked bank descriptions,
plus the Text-To-Concept (whole original image) and Random baselines.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from common_utilities import LOGGER, LOG_LEVEL, crop_image_box, resize_bilinear, resolve_logger, write_json
from utilities.Datatypes import ExplainMode, FeatureSpace
from utilities.request_models import ExplanationRecord, RankedText

from ..Classification_Task.classifier import images_to_batch, predict, predict_multilabel
from ..Classification_Task.embedder import embed_texts
from ..Concept_Task.attribution import AttributionConfig, NeuronSelection, attribute
from ..Concept_Task.featviz import ConceptImage, VizConfig, export_concept_image, synthesize
from ..errors import StageError
from ..numerics import DTYPE
from .alignment import align
from .conceptbank import ConceptBank, compose

MIN_IMAGE_SIDE = 8


@dataclass(frozen=True)
class CropConfig:
    count: int = 6
    low: float = 0.25
    high: float = 0.30
    center_sigma: float = 0.125
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.low <= self.high <= 1.0:
            raise ValueError(f"crop fraction range must satisfy 0 < low <= high <= 1, got [{self.low}, {self.high}]")
        if self.count < 1:
            raise ValueError(f"crop count must be >= 1, got {self.count}")
        if self.center_sigma < 0.0:
            raise ValueError(f"center_sigma must be >= 0, got {self.center_sigma}")


@dataclass
class Explanation:
    input_id: str
    target_class: int
    mode: ExplainMode
    k_con: int
    results: List[Tuple[str, float]]
    space: FeatureSpace = FeatureSpace.RAW
    neurons: List[int] = field(default_factory=list)
    concept_image: Optional[ConceptImage] = None
    concept_image_path: Optional[str] = None
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def texts(self) -> List[str]:
        return [text for text, _ in self.results]

    def to_record(self) -> ExplanationRecord:
        return ExplanationRecord(
            input=self.input_id, class_id=self.target_class, mode=self.mode.value, space=self.space.value,
            k_con=self.k_con, results=[RankedText(text=t, score=s) for t, s in self.results],
            neurons=self.neurons, concept_image_path=self.concept_image_path, seeds=self.seeds,
        )


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def sample_crop_boxes(side: int, config: CropConfig, rng: np.random.Generator) -> List[Tuple[int, int, int]]:
    """``config.count`` boxes ``(x, y, size)`` fully inside a ``side`` x ``side`` image."""
    boxes = []
    for _ in range(config.count):
        size = int(round(rng.uniform(config.low, config.high) * side))
        size = min(max(size, 1), side)
        center_x, center_y = rng.normal(side / 2.0, config.center_sigma * side, size=2)
        x = int(min(max(round(center_x - size / 2.0), 0), side - size))
        y = int(min(max(round(center_y - size / 2.0), 0), side - size))
        boxes.append((x, y, size))
    return boxes


def crop_patches(image: np.ndarray, config: CropConfig) -> List[np.ndarray]:
    """Square crops resized (bilinear) back to the input resolution; deterministic per ``config.seed``."""
    side = image.shape[0]
    if side < MIN_IMAGE_SIDE or image.shape[1] != side:
        raise ValueError(f"crop_patches needs a square image with side >= {MIN_IMAGE_SIDE}, got {image.shape}")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    return [
        resize_bilinear(crop_image_box(image, x, y, size), side)
        for x, y, size in sample_crop_boxes(side, config, rng)
    ]


def rank_by_similarity(image_vecs: torch.Tensor, text_vecs: torch.Tensor, texts: Sequence[str],
                       k_con: int) -> List[Tuple[str, float]]:
    """Average cosine of each text over all image vectors; top ``k_con`` by score, ties in bank order."""
    if len(texts) == 0:
        raise ValueError("cannot rank an empty bank")
    if not 1 <= k_con <= len(texts):
        raise ValueError(f"k_con must lie in [1, {len(texts)}], got {k_con}")
    image_vecs = F.normalize(torch.as_tensor(image_vecs).to(DTYPE).reshape(-1, text_vecs.shape[-1]), dim=-1)
    text_vecs = F.normalize(torch.as_tensor(text_vecs).to(DTYPE), dim=-1)
    scores = (image_vecs @ text_vecs.T).mean(dim=0)
    order = torch.sort(scores, descending=True, stable=True).indices[:k_con].tolist()
    return [(texts[i], float(scores[i])) for i in order]


@torch.no_grad()
def rank_descriptions(classifier, aligner, embedder, patches: Sequence[np.ndarray], texts: Sequence[str],
                      k_con: int) -> List[Tuple[str, float]]:
    """Score each description by the mean over patches of cos(h(f(patch)), E_text(text))."""
    if len(texts) == 0:
        raise ValueError("cannot rank an empty bank")
    patch_vecs = align(aligner, classifier.features(images_to_batch(list(patches))))
    return rank_by_similarity(patch_vecs, embed_texts(embedder, list(texts)), texts, k_con)


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
class TexterExplainer:
    """Runs attribution -> concept image -> crops -> ranking for single images."""

    def __init__(self, classifier, embedder, aligner, bank: ConceptBank, magnitude: torch.Tensor,
                 sae=None, attribution: AttributionConfig = None, viz: VizConfig = None,
                 crop: CropConfig = None, k_con: int = 3, whole_image_term: bool = False,
                 logger: Union[LOGGER, str, None] = None):
        self.logs = resolve_logger(logger)
        self.classifier = classifier
        self.embedder = embedder
        self.aligner = aligner
        self.bank = bank
        self.magnitude = magnitude
        self.sae = sae
        self.space = FeatureSpace.SAE if sae is not None else FeatureSpace.RAW
        self.attribution = AttributionConfig(space=self.space) if attribution is None else attribution
        if self.attribution.space is not self.space:
            self.attribution = AttributionConfig(self.attribution.steps, self.attribution.k_neu, self.space,
                                                 self.attribution.baseline)
        self.viz = viz or VizConfig()
        self.crop = crop or CropConfig()
        self.k_con = k_con
        self.whole_image_term = whole_image_term

    def _stage(self, name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            self.logs.write_logs(f"Stage '{name}' failed: {exc}", LOG_LEVEL.ERROR)
            raise StageError(name, exc) from exc

    def bank_slice(self, classes: Sequence[int]) -> List[str]:
        texts = compose(self.bank, classes)
        if not texts:
            raise ValueError(f"concept bank is empty for classes {list(classes)}")
        return texts

    @torch.no_grad()
    def predicted_class(self, image: np.ndarray) -> int:
        return int(predict(self.classifier, image)[0])

    @torch.no_grad()
    def feature(self, image: np.ndarray) -> torch.Tensor:
        return self.classifier.features(images_to_batch(image))[0]

    def select_neurons(self, image: np.ndarray, target_class: int) -> NeuronSelection:
        return self._stage("attribution", attribute, self.classifier, self.feature(image), target_class,
                           self.attribution, self.sae)

    def explain_texter(self, image: np.ndarray, target_class: Optional[int] = None,
                       bank_classes: Optional[Sequence[int]] = None, input_id: str = "image",
                       seed: int = 0, k_con: Optional[int] = None) -> Explanation:
        """Explain ``target_class`` (default: the prediction) for ``image``."""
        if target_class is None:
            target_class = self.predicted_class(image)
        k_con = self.k_con if k_con is None else k_con
        texts = self._stage("bank", self.bank_slice, bank_classes or [target_class])
        selection = self.select_neurons(image, target_class)
        viz = VizConfig(self.viz.iterations, self.viz.lr, self.viz.reg_weight, self.viz.magnitude_source, seed)
        concept = self._stage("featviz", synthesize, self.classifier, selection, self.magnitude, viz, self.sae,
                              logger=self.logs)
        crop = CropConfig(self.crop.count, self.crop.low, self.crop.high, self.crop.center_sigma, seed)
        patches = self._stage("crop", crop_patches, concept.pixels, crop)
        if self.whole_image_term:
            patches = patches + [concept.pixels]
        results = self._stage("rank", rank_descriptions, self.classifier, self.aligner, self.embedder,
                              patches, texts, k_con)
        self.logs.write_logs(f"[{input_id}] class {target_class}: {[t for t, _ in results]}", LOG_LEVEL.DEBUG)
        return Explanation(
            input_id=input_id, target_class=target_class, mode=ExplainMode.TEXTER, k_con=k_con,
            results=results, space=self.space, neurons=list(selection.indices), concept_image=concept,
            seeds={"viz": seed, "crop": seed},
        )

    @torch.no_grad()
    def explain_baseline(self, mode: Union[str, ExplainMode], image: np.ndarray, target_class: Optional[int] = None,
                         bank_classes: Optional[Sequence[int]] = None, input_id: str = "image",
                         seed: int = 0, k_con: Optional[int] = None) -> Explanation:
        mode = ExplainMode.parse(mode) if isinstance(mode, str) else mode
        if target_class is None:
            target_class = self.predicted_class(image)
        k_con = self.k_con if k_con is None else k_con
        texts = self._stage("bank", self.bank_slice, bank_classes or [target_class])
        if mode is ExplainMode.TEXT_TO_CONCEPT:
            results = self._stage("rank", rank_descriptions, self.classifier, self.aligner, self.embedder,
                                  [image], texts, k_con)
            return Explanation(input_id, target_class, mode, k_con, results, FeatureSpace.RAW)
        if mode is ExplainMode.RANDOM:
            results = self._stage("rank", random_descriptions, texts, k_con, seed)
            return Explanation(input_id, target_class, mode, k_con, results, FeatureSpace.RAW,
                               seeds={"random": seed})
        raise ValueError(f"'{mode.value}' is not a baseline mode")

    def explain(self, mode: Union[str, ExplainMode], image: np.ndarray, **kwargs) -> Explanation:
        mode = ExplainMode.parse(mode) if isinstance(mode, str) else mode
        if mode is ExplainMode.TEXTER:
            return self.explain_texter(image, **kwargs)
        return self.explain_baseline(mode, image, **kwargs)

    def explain_multilabel(self, image: np.ndarray, mode: Union[str, ExplainMode] = ExplainMode.TEXTER,
                           input_id: str = "image", seed: int = 0) -> List[Explanation]:
        """One explanation per predicted class, each ranked over the union bank of all predicted classes."""
        predicted = predict_multilabel(self.classifier, image)[0]
        if not predicted:
            self.logs.write_logs(f"[{input_id}] no class above the multilabel threshold", LOG_LEVEL.WARNING)
            return []
        return [
            self.explain(mode, image, target_class=c, bank_classes=predicted, input_id=input_id, seed=seed)
            for c in predicted
        ]


def random_descriptions(texts: Sequence[str], k_con: int, seed: int) -> List[Tuple[str, float]]:
    """``k_con`` distinct bank entries drawn uniformly; scores are 0."""
    if not 1 <= k_con <= len(texts):
        raise ValueError(f"k_con must lie in [1, {len(texts)}], got {k_con}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return [(texts[i], 0.0) for i in rng.choice(len(texts), size=k_con, replace=False).tolist()]


def export_explanation(explanation: Explanation, directory: Union[str, Path], stem: str) -> Path:
    """Write ``<stem>.json`` (and the concept image PPM + sidecar in texter mode)."""
    directory = Path(directory)
    if explanation.concept_image is not None:
        ppm_path = export_concept_image(explanation.concept_image, directory, f"{stem}_concept")
        explanation.concept_image_path = ppm_path.name
    json_path = directory / f"{stem}.json"
    write_json(explanation.to_record().model_dump(by_alias=True), json_path)
    return json_path
