#!/usr/bin/env python3.10
import gc
from typing import List, Optional, Union

import torch

from common_utilities import ConfigManager, LOGGER, LOG_LEVEL, read_json, resolve_logger
from utilities import (
    ALIGNER_FILE,
    CLASSIFIER_FILE,
    EMBEDDER_FILE,
    MULTILABEL_CLASSIFIER_FILE,
    SAE_FILE,
    SCENE_FILE,
    require_artifact,
)
from utilities.Datatypes import FeatureSpace, MagnitudeSource, Stage

from .Classification_Task.classifier import ClassifierModel
from .Classification_Task.embedder import JointEmbedder
from .Concept_Task.attribution import AttributionConfig
from .Concept_Task.featviz import VizConfig, analytic_magnitude, mean_magnitude_spectrum
from .Concept_Task.sae import SparseAutoencoder
from .Explanation_Task.alignment import Aligner
from .Explanation_Task.conceptbank import ConceptBank, load_bank
from .Explanation_Task.explain import CropConfig, TexterExplainer
from .synthdata import Sample, load_dataset

TRAIN_SPLIT = "train"
TEST_SPLIT = "test"
COMPOSITE_SPLIT = "composites"


class ModelsManager:
    """Loads every trained artefact of one run and hands out explainers over them."""

    __IS_INITIALIZE = False

    def __init__(self, config: ConfigManager, load_sae: bool = True,
                 logger: Union[LOGGER, str, None] = None):
        #_________________________________________________________________________#
        self.logs = resolve_logger(logger)
        self.config = config
        checkpoints = config.paths.checkpoints
        #_________________________________________________________________________#
        self.classifier = ClassifierModel.load(require_artifact(Stage.TRAIN_CLASSIFIER, checkpoints / CLASSIFIER_FILE))
        self.embedder = JointEmbedder.load(require_artifact(Stage.TRAIN_EMBEDDER, checkpoints / EMBEDDER_FILE))
        self.aligner = Aligner.load(require_artifact(Stage.TRAIN_ALIGNER, checkpoints / ALIGNER_FILE))
        self.bank: ConceptBank = load_bank(require_artifact(Stage.GEN_DATA, config.paths.bank),
                                           n_classes=self.classifier.n_classes, logger=self.logs)
        self.sae: Optional[SparseAutoencoder] = None
        sae_path = checkpoints / SAE_FILE
        if load_sae and config.sae.enabled and sae_path.exists():
            self.sae = SparseAutoencoder.load(sae_path)
        elif load_sae and config.sae.enabled:
            self.logs.write_logs(f"No SAE at {sae_path}; explaining in raw feature space", LOG_LEVEL.WARNING)
        self.multilabel_classifier: Optional[ClassifierModel] = None
        multilabel_path = checkpoints / MULTILABEL_CLASSIFIER_FILE
        if multilabel_path.exists():
            self.multilabel_classifier = ClassifierModel.load(multilabel_path)
        self.magnitude = self.__build_magnitude()
        #_________________________________________________________________________#
        self.__IS_INITIALIZE = True
        self.logs.write_logs(
            f"Models loaded: {self.classifier.n_classes} classes, bank of {len(self.bank.classes())} class(es), "
            f"SAE {'on' if self.sae is not None else 'off'}", LOG_LEVEL.INFO,
        )
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    def __del__(self):
        for name in ("classifier", "embedder", "aligner", "sae", "multilabel_classifier"):
            if hasattr(self, name):
                setattr(self, name, None)
        gc.collect()
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    def __build_magnitude(self) -> torch.Tensor:
        viz = self.config.viz
        if MagnitudeSource(viz.magnitude_source) is MagnitudeSource.ANALYTIC:
            return analytic_magnitude(self.config.data.side)
        samples = self.samples(TRAIN_SPLIT)[: viz.magnitude_samples]
        return mean_magnitude_spectrum(samples)
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    def samples(self, split: str) -> List[Sample]:
        return load_dataset(require_artifact(Stage.GEN_DATA, self.config.paths.data / split / "manifest.jsonl").parent)
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    def class_names(self) -> List[str]:
        scene = self.config.paths.data / SCENE_FILE
        if not scene.exists():
            return [""] * self.classifier.n_classes
        return list(read_json(scene)["class_names"])
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    def explainer(self, space: Optional[Union[str, FeatureSpace]] = None, multilabel: bool = False,
                  bank: Optional[ConceptBank] = None) -> TexterExplainer:
        """Explainer in ``space`` (default: SAE when one is loaded, raw otherwise)."""
        space = FeatureSpace(space) if space is not None else (FeatureSpace.SAE if self.sae is not None else FeatureSpace.RAW)
        if space is FeatureSpace.SAE and self.sae is None:
            raise ValueError("SAE space requested but no SAE is loaded")
        classifier = self.multilabel_classifier if multilabel else self.classifier
        if classifier is None:
            raise ValueError("multilabel explanation needs the multilabel classifier from train-classifier")
        cfg = self.config
        return TexterExplainer(
            classifier=classifier,
            embedder=self.embedder,
            aligner=self.aligner,
            bank=bank or self.bank,
            magnitude=self.magnitude,
            sae=self.sae if space is FeatureSpace.SAE else None,
            attribution=AttributionConfig(steps=cfg.attribution.steps, k_neu=cfg.attribution.k_neu, space=space),
            viz=VizConfig(cfg.viz.iterations, cfg.viz.lr, cfg.viz.reg_weight,
                          MagnitudeSource(cfg.viz.magnitude_source), cfg.seed),
            crop=CropConfig(cfg.crop.count, cfg.crop.low, cfg.crop.high, cfg.crop.center_sigma, cfg.seed),
            k_con=cfg.explain.k_con,
            whole_image_term=cfg.explain.whole_image_term,
            logger=self.logs,
        )
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
    @property
    def IS_INITIALIZE(self):
        return self.__IS_INITIALIZE
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
