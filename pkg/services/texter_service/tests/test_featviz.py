import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "..")))

import numpy as np
import torch

from common_utilities import read_json
from src.Classification_Task.classifier import ClassifierModel
from src.Concept_Task.attribution import NeuronSelection
from src.Concept_Task.featviz import (
    FourierImage,
    VizConfig,
    analytic_magnitude,
    export_concept_image,
    mean_magnitude_spectrum,
    squash,
    synthesize,
    total_variation,
)
from src.Concept_Task.sae import SparseAutoencoder
from src.numerics import dft2, seeded_module
from src.synthdata import SceneSpec, generate
from utilities.Datatypes import FeatureSpace, MagnitudeSource


class MagnitudeTests(unittest.TestCase):
    def test_analytic_magnitude_is_point_symmetric(self):
        magnitude = analytic_magnitude(9)
        mirrored = torch.roll(torch.flip(magnitude, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
        self.assertTrue(torch.equal(magnitude, mirrored))
        self.assertEqual(tuple(magnitude.shape), (3, 9, 9))

    def test_mean_spectrum_of_one_image(self):
        sample = generate(SceneSpec(side=16), 1, seed=0)[0]
        expected = dft2(torch.from_numpy(sample.image.astype(np.float64).transpose(2, 0, 1).copy())).magnitude()
        self.assertTrue(torch.allclose(mean_magnitude_spectrum([sample, sample]), expected))
        with self.assertRaises(ValueError):
            mean_magnitude_spectrum([])

    def test_spectrum_of_an_image_and_its_negative(self):
        image = np.random.Generator(np.random.PCG64(7)).random((12, 12, 3))
        expected = dft2(torch.from_numpy(image.transpose(2, 0, 1).copy())).magnitude()
        mean = mean_magnitude_spectrum([image, 1.0 - image])
        off_dc = torch.ones(12, 12, dtype=torch.bool)
        off_dc[0, 0] = False
        self.assertTrue(torch.allclose(mean[:, off_dc], expected[:, off_dc], atol=1e-9))

    def test_analytic_magnitude_carries_visible_contrast(self):
        magnitude = analytic_magnitude(32)
        self.assertAlmostEqual(float(magnitude[0, 0, 0]) / 32 ** 2, 0.5)
        ac = magnitude.clone()
        ac[:, 0, 0] = 0.0
        pixel_std = ac.pow(2).sum(dim=(1, 2)).sqrt() / 32 ** 2
        self.assertTrue(bool((pixel_std >= 0.3).all()))
        self.assertEqual(VizConfig().magnitude_source, MagnitudeSource.ANALYTIC)

    def test_phase_only_image_keeps_magnitude(self):
        magnitude = analytic_magnitude(16)
        image = FourierImage(magnitude, seed=3)
        self.assertTrue(torch.allclose(dft2(image.pre_squash()).magnitude(), magnitude, atol=1e-9))

    def test_squash_and_total_variation(self):
        self.assertAlmostEqual(float(squash(torch.tensor(0.5))), 0.5)
        self.assertEqual(float(total_variation(torch.ones(3, 5, 5))), 0.0)
        self.assertAlmostEqual(float(total_variation(torch.tensor([[0.0, 1.0], [0.0, 1.0]]))), 1.0)


class SynthesizeTests(unittest.TestCase):
    def setUp(self):
        self.classifier = seeded_module(lambda: ClassifierModel(n_classes=3, side=16, feature_dim=8), 0)
        self.magnitude = analytic_magnitude(16)
        self.selection = NeuronSelection(target_class=1, indices=[0, 3], scores=torch.zeros(8))
        self.config = VizConfig(iterations=12, lr=0.05, seed=5)

    def test_magnitude_is_fixed_at_every_iteration(self):
        deviations = []

        def watch(_, pre):
            deviations.append(float((dft2(pre).magnitude() - self.magnitude).abs().max()))

        synthesize(self.classifier, self.selection, self.magnitude, self.config, on_iteration=watch)
        self.assertEqual(len(deviations), self.config.iterations)
        self.assertLess(max(deviations), 1e-6)

    def test_returns_best_iterate(self):
        concept = synthesize(self.classifier, self.selection, self.magnitude, self.config)
        self.assertEqual(len(concept.trace), 12)
        self.assertEqual(concept.criterion, max(concept.trace))
        self.assertGreaterEqual(concept.criterion, concept.trace[0])
        self.assertEqual(concept.pixels.shape, (16, 16, 3))
        self.assertEqual(concept.pixels.dtype, np.float32)
        self.assertGreaterEqual(float(concept.pixels.min()), 0.0)
        self.assertLessEqual(float(concept.pixels.max()), 1.0)

    def test_planted_intensity_neuron_brightens_the_image(self):
        classifier = seeded_module(lambda: ClassifierModel(n_classes=3, side=16, feature_dim=8, encoder="mlp"), 0)
        first, second = classifier.encoder.layers[1], classifier.encoder.layers[3]
        with torch.no_grad():
            for layer in (first, second):
                layer.weight.zero_()
                layer.bias.zero_()
            first.weight[0] = 1.0 / (3 * 16 * 16)
            second.weight[0, 0] = 1.0
        selection = NeuronSelection(target_class=0, indices=[0], scores=torch.zeros(8))
        config = VizConfig(iterations=64, lr=0.1, reg_weight=0.0, seed=2)
        concept = synthesize(classifier, selection, self.magnitude, config)
        self.assertGreater(concept.criterion, concept.trace[0])
        self.assertGreater(float(concept.pixels.astype(np.float64).mean()), concept.trace[0])

    def test_same_seed_same_pixels(self):
        first = synthesize(self.classifier, self.selection, self.magnitude, self.config)
        second = synthesize(self.classifier, self.selection, self.magnitude, self.config)
        self.assertTrue(np.array_equal(first.pixels, second.pixels))
        self.assertEqual(first.trace, second.trace)

    def test_sae_space_selection(self):
        sae = seeded_module(lambda: SparseAutoencoder(8, expansion=2, k=4), 1)
        selection = NeuronSelection(target_class=0, indices=[2, 9], scores=torch.zeros(16), space=FeatureSpace.SAE)
        concept = synthesize(self.classifier, selection, self.magnitude, VizConfig(iterations=4), sae=sae)
        self.assertEqual(concept.space, FeatureSpace.SAE)
        with self.assertRaises(ValueError):
            synthesize(self.classifier, selection, self.magnitude, VizConfig(iterations=4))
        with self.assertRaises(ValueError):
            synthesize(self.classifier, NeuronSelection(0, [8], torch.zeros(8)), self.magnitude, VizConfig(iterations=4))

    def test_export_writes_image_and_sidecar(self):
        concept = synthesize(self.classifier, self.selection, self.magnitude, VizConfig(iterations=3))
        with tempfile.TemporaryDirectory() as tmpdir:
            ppm = export_concept_image(concept, tmpdir, "0_texter_c1_concept")
            sidecar = read_json(Path(tmpdir) / "0_texter_c1_concept.json")
            self.assertTrue(ppm.exists())
        self.assertEqual(sidecar["class"], 1)
        self.assertEqual(sidecar["neurons"], [0, 3])
        self.assertEqual(sidecar["trace"], concept.trace)
        self.assertEqual(sidecar["best_iteration"], concept.best_iteration)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            VizConfig(iterations=0)
        with self.assertRaises(ValueError):
            FourierImage(torch.ones(16, 16))


if __name__ == "__main__":
    unittest.main()
