#!/usr/bin/env python3.10
"""
Desk-scale acceptance runs. Slow: they train every model at the shipped
defaults, so they only run with TEXTER_ACCEPTANCE=1.
"""
import os
import sys
import tempfile
import time
import unittest
from pathlib import Path

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
sys.path.append(ROOT)
sys.path.append(os.path.join(ROOT, "services", "texter_service"))

import torch

from common_utilities import read_json
from common_utilities.config_manager import SAEConfig
from src.Classification_Task.classifier import ClassifierModel
from src.Concept_Task.attribution import NeuronSelection
from src.Concept_Task.featviz import VizConfig, analytic_magnitude, synthesize
from src.Concept_Task.sae import reconstruction_mse, train_sae
from src.Explanation_Task.alignment import fit_aligner
from src.numerics import DTYPE, seeded_generator, seeded_module
from utilities import read_manifest
from utilities.Datatypes import ExitCode, Stage

import texter

ENABLED = os.environ.get("TEXTER_ACCEPTANCE") == "1"
CONFIG = Path(ROOT) / "config" / "texter.json"


@unittest.skipUnless(ENABLED, "set TEXTER_ACCEPTANCE=1 to run acceptance checks")
class ComponentAcceptance(unittest.TestCase):
    def test_sae_reconstructs_low_rank_features(self):
        generator = seeded_generator(0)
        basis = torch.randn(4, 64, generator=generator)
        features = torch.randn(20000, 4, generator=generator) @ basis
        sae, _ = train_sae(features, SAEConfig(expansion=8, topk_ratio=0.1, lr=5e-4, epochs=10, batch_size=64), seed=0)
        self.assertLess(reconstruction_mse(sae, features), 1e-3 * float(features.var()))
        codes = sae.encode(features[:1000])
        self.assertTrue(bool(((codes != 0).sum(dim=1) == sae.k).all()))

    def test_sgd_aligner_is_within_five_percent_of_closed_form(self):
        generator = seeded_generator(1)
        X = torch.randn(500, 16, generator=generator, dtype=DTYPE)
        Y = X @ torch.randn(16, 8, generator=generator, dtype=DTYPE) + 0.1 * torch.randn(500, 8, generator=generator, dtype=DTYPE)
        exact = fit_aligner(X, Y, "closed-form", ridge=0.0)
        sgd = fit_aligner(X, Y, "sgd", sgd_steps=2000, sgd_lr=1e-2)
        self.assertLess(sgd.residual, 1.05 * exact.residual)

    def test_feature_visualization_improves_and_is_fast(self):
        classifier = seeded_module(lambda: ClassifierModel(n_classes=4, side=32), 0)
        magnitude = analytic_magnitude(32)
        for run in range(100):
            selection = NeuronSelection(target_class=run % 4, indices=[run % 64, (run * 7 + 3) % 64], scores=torch.zeros(64))
            concept = synthesize(classifier, selection, magnitude, VizConfig(iterations=32, seed=run))
            self.assertGreaterEqual(concept.criterion, concept.trace[0])
        started = time.perf_counter()
        synthesize(classifier, NeuronSelection(0, [0, 1], torch.zeros(64)), magnitude, VizConfig(iterations=512))
        self.assertLess(time.perf_counter() - started, 5.0)


@unittest.skipUnless(ENABLED, "set TEXTER_ACCEPTANCE=1 to run acceptance checks")
class PipelineAcceptance(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        cls.out = Path(cls.tmpdir.name) / "run"
        cls.codes = [texter.main([stage.value, "--config", str(CONFIG), "--out", str(cls.out)]) for stage in Stage]

    @classmethod
    def tearDownClass(cls):
        cls.tmpdir.cleanup()

    def _summary(self, stage: Stage) -> dict:
        return read_manifest(self.out, stage).summary

    def test_every_stage_succeeds(self):
        self.assertEqual(self.codes, [int(ExitCode.OK)] * len(self.codes))

    def test_trained_models(self):
        self.assertGreaterEqual(self._summary(Stage.TRAIN_CLASSIFIER)["train_accuracy"], 0.98)
        self.assertGreaterEqual(self._summary(Stage.TRAIN_EMBEDDER)["test_retrieval_top1"], 0.90)
        self.assertGreaterEqual(self._summary(Stage.TRAIN_SAE)["argmax_agreement"], 0.90)

    def test_concept_images_are_valid(self):
        report = read_json(self.out / "evaluate" / "validity_sae.json")
        self.assertGreaterEqual(report["acc1"], 0.70)
        self.assertGreater(report["acc1_ci"][0], 1.0 / 4)

    def test_texter_beats_text_to_concept_on_causal_hits(self):
        report = read_json(self.out / "bench-faithfulness" / "faithfulness.json")
        texter_scores = report["methods"]["texter"]
        ttc_scores = report["methods"]["text-to-concept"]
        random_scores = report["methods"]["random"]
        self.assertGreater(texter_scores["causal_hit_ci"][0], ttc_scores["causal_hit_ci"][1])
        self.assertGreater(ttc_scores["distractor_hit"], texter_scores["distractor_hit"])
        low, high = random_scores["causal_topk_hit_ci"]
        self.assertTrue(low <= report["random_expected_topk"] <= high)


if __name__ == "__main__":
    unittest.main()
