import os
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "..")))

import numpy as np
import torch

from common_utilities.config_manager import ClassifierConfig
from src.Classification_Task.classifier import (
    ClassifierModel,
    accuracy,
    finetune_multilabel_head,
    images_to_batch,
    predict,
    predict_multilabel,
    predict_proba,
    train_classifier,
)
from src.synthdata import SceneSpec, generate, generate_composites

SPEC = SceneSpec(side=16, n_classes=3, n_distractors=2)
CONFIG = ClassifierConfig(feature_dim=16, epochs=6, lr=1e-2, batch_size=32)


class ClassifierTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.samples = generate(SPEC, 96, seed=4)
        cls.model, cls.losses = train_classifier(cls.samples, CONFIG, seed=4, n_classes=3)

    def test_batch_layout(self):
        batch = images_to_batch(self.samples[:2])
        self.assertEqual(tuple(batch.shape), (2, 3, 16, 16))
        self.assertEqual(batch.dtype, torch.float32)
        self.assertEqual(tuple(images_to_batch(self.samples[0].image).shape), (1, 3, 16, 16))

    def test_loss_decreases(self):
        self.assertEqual(len(self.losses), CONFIG.epochs)
        self.assertLess(self.losses[-1], self.losses[0])
        self.assertIn("train_accuracy", self.model.metadata)

    def test_training_is_deterministic(self):
        again, losses = train_classifier(self.samples, CONFIG, seed=4, n_classes=3)
        self.assertEqual(losses, self.losses)
        for name, tensor in self.model.state_dict().items():
            self.assertTrue(torch.equal(tensor, again.state_dict()[name]), name)

    def test_probabilities_and_predictions(self):
        probabilities = predict_proba(self.model, self.samples[:5])
        self.assertEqual(probabilities.shape, (5, 3))
        self.assertTrue(np.allclose(probabilities.sum(axis=1), 1.0))
        self.assertTrue(np.array_equal(predict(self.model, self.samples[:5]), probabilities.argmax(axis=1)))

    def test_save_then_load_predicts_identically(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = self.model.save(Path(tmpdir) / "classifier.txck")
            loaded = ClassifierModel.load(path)
        self.assertEqual(loaded.architecture, self.model.architecture)
        batch = images_to_batch(self.samples[:8])
        with torch.no_grad():
            self.assertTrue(torch.equal(loaded(batch), self.model(batch)))

    def test_head_composes_with_features(self):
        batch = images_to_batch(self.samples[:4])
        with torch.no_grad():
            self.assertTrue(torch.allclose(self.model.logits_from_features(self.model.features(batch)), self.model(batch)))

    def test_multilabel_head_keeps_encoder_frozen(self):
        composites = generate_composites(SPEC, 24, seed=4)
        tuned, losses = finetune_multilabel_head(self.model, composites, threshold=0.3, epochs=2, seed=4)
        self.assertEqual(len(losses), 2)
        self.assertTrue(tuned.multilabel)
        self.assertFalse(self.model.multilabel)
        for name, tensor in self.model.encoder.state_dict().items():
            self.assertTrue(torch.equal(tensor, tuned.encoder.state_dict()[name]), name)
        self.assertFalse(torch.equal(tuned.head.weight, self.model.head.weight))
        everything = predict_multilabel(tuned, composites[:3], threshold=0.0)
        self.assertEqual(everything, [[0, 1, 2]] * 3)

    def test_untrained_model_scores_chance(self):
        held_out = generate(SPEC, 300, seed=12)
        untrained, losses = train_classifier(held_out, replace(CONFIG, epochs=0), seed=4, n_classes=3)
        self.assertEqual(losses, [])
        self.assertAlmostEqual(accuracy(untrained, held_out), 1.0 / 3, delta=0.1)

    def test_threshold_one_predicts_no_class(self):
        self.assertEqual(predict_multilabel(self.model, self.samples[:6], threshold=1.0), [[]] * 6)

    def test_unknown_encoder(self):
        with self.assertRaises(ValueError):
            ClassifierModel(n_classes=3, encoder="transformer")
        with self.assertRaises(ValueError):
            train_classifier([], CONFIG, seed=0, n_classes=3)


if __name__ == "__main__":
    unittest.main()
