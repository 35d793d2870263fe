import os
import sys
import unittest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "..")))

import torch

from src.Classification_Task.classifier import ClassifierModel
from src.Concept_Task.attribution import (
    AttributionConfig,
    attribute,
    class_logit_head,
    integrated_gradients,
    select_top_neurons,
)
from src.Concept_Task.sae import SparseAutoencoder
from src.errors import ShapeError
from src.numerics import DTYPE, seeded_generator, seeded_module
from utilities.Datatypes import FeatureSpace


class IntegratedGradientsTests(unittest.TestCase):
    def test_linear_head_has_closed_form(self):
        generator = seeded_generator(0)
        weight = torch.randn(6, generator=generator, dtype=DTYPE)
        z = torch.randn(6, generator=generator, dtype=DTYPE)
        baseline = torch.randn(6, generator=generator, dtype=DTYPE)
        scores = integrated_gradients(lambda x: x @ weight + 0.5, z, steps=10, baseline=baseline)
        self.assertTrue(torch.allclose(scores, (z - baseline) * weight, atol=1e-12))

    def test_input_at_baseline_scores_zero(self):
        z = torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)
        scores = integrated_gradients(lambda x: (x ** 3).sum(), z, steps=5, baseline=z.clone())
        self.assertTrue(torch.equal(scores, torch.zeros(3, dtype=DTYPE)))

    def test_completeness_improves_with_steps(self):
        z = torch.tensor([0.3, -1.2, 2.0, 0.7], dtype=DTYPE)
        head = lambda x: 0.5 * (x ** 2).sum()
        target = float(head(z) - head(torch.zeros(4, dtype=DTYPE)))
        errors = []
        for steps in (50, 100, 200, 400):
            total = float(integrated_gradients(head, z, steps=steps).sum())
            errors.append(abs(total - target) / abs(target))
        self.assertLessEqual(errors[1], 0.02)
        self.assertEqual(errors, sorted(errors, reverse=True))

    def test_bad_arguments(self):
        with self.assertRaises(ShapeError):
            integrated_gradients(lambda x: x.sum(), torch.zeros(3), baseline=torch.zeros(4))
        with self.assertRaises(ValueError):
            integrated_gradients(lambda x: x.sum(), torch.zeros(3), steps=0)
        with self.assertRaises(ValueError):
            AttributionConfig(steps=0)


class SelectionTests(unittest.TestCase):
    def test_ties_go_to_lowest_index(self):
        selection = select_top_neurons(torch.tensor([0.5, 2.0, 0.5, 2.0, 1.0]), 3, target_class=1)
        self.assertEqual(selection.indices, [1, 3, 4])
        self.assertEqual(selection.to_dict()["neurons"], [1, 3, 4])

    def test_k_out_of_range(self):
        for k in (0, 4):
            with self.assertRaises(ValueError):
                select_top_neurons(torch.ones(3), k)


class AttributeTests(unittest.TestCase):
    def setUp(self):
        self.classifier = seeded_module(lambda: ClassifierModel(n_classes=3, side=16, feature_dim=8), 0)
        self.sae = seeded_module(lambda: SparseAutoencoder(8, expansion=2, k=4), 0)
        self.feature = torch.rand(8, generator=seeded_generator(1))

    def test_raw_space_selects_k_neurons(self):
        selection = attribute(self.classifier, self.feature, 2, AttributionConfig(steps=8, k_neu=3))
        self.assertEqual(len(selection.indices), 3)
        self.assertEqual(len(set(selection.indices)), 3)
        self.assertEqual(selection.space, FeatureSpace.RAW)
        weight = self.classifier.head.weight.detach().to(DTYPE)[2]
        expected = self.feature.to(DTYPE) * weight
        self.assertTrue(torch.allclose(selection.scores, expected, atol=1e-9))

    def test_sae_head_matches_classifier_through_decoder(self):
        head = class_logit_head(self.classifier, 1, self.sae)
        code = self.sae.encode(self.feature).detach()
        with torch.no_grad():
            expected = self.classifier.logits_from_features(self.sae.decode(code))[1]
        self.assertAlmostEqual(float(head(code.to(DTYPE))), float(expected), places=5)

    def test_sae_space_scores_code_units(self):
        config = AttributionConfig(steps=8, k_neu=2, space=FeatureSpace.SAE)
        selection = attribute(self.classifier, self.feature, 0, config, sae=self.sae)
        self.assertEqual(selection.scores.numel(), self.sae.dict_dim)
        with self.assertRaises(ValueError):
            attribute(self.classifier, self.feature, 0, config)

    def test_orthogonal_heads_select_disjoint_neurons(self):
        with torch.no_grad():
            self.classifier.head.weight.zero_()
            self.classifier.head.bias.zero_()
            self.classifier.head.weight[0, :3] = 1.0
            self.classifier.head.weight[1, 3:6] = 1.0
        config = AttributionConfig(steps=8, k_neu=3)
        feature = torch.ones(8)
        self.assertEqual(attribute(self.classifier, feature, 0, config).indices, [0, 1, 2])
        self.assertEqual(attribute(self.classifier, feature, 1, config).indices, [3, 4, 5])

    def test_class_out_of_range(self):
        with self.assertRaises(ValueError):
            class_logit_head(self.classifier, 3)


if __name__ == "__main__":
    unittest.main()
