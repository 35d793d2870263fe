import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "..")))

import numpy as np
import pandas as pd
import torch
from torch import nn

from src.Classification_Task.embedder import JointEmbedder, Vocabulary, embed_images, embed_texts
from src.evalharness import (
    bootstrap_ci,
    clipscore_analog,
    faithfulness_benchmark,
    faithfulness_table,
    image_seed,
    ordered_map,
    topk_size,
    validity_metrics,
    validity_table,
    write_table,
)
from src.Explanation_Task.conceptbank import ConceptBank
from src.Explanation_Task.explain import Explanation, random_descriptions
from src.numerics import seeded_module
from src.synthdata import SceneSpec, generate
from utilities.Datatypes import ExplainMode
from utilities.request_models import FaithfulnessReport


class BrightnessClassifier(nn.Module):
    """Class 0 logit 0; class 1 logit scale*(mean - 0.5); class 2 a constant."""

    n_classes = 3

    def __init__(self, scale: float = 1.0):
        super().__init__()
        self.scale = scale

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        brightness = images.mean(dim=(1, 2, 3))
        zeros = torch.zeros_like(brightness)
        return torch.stack([zeros, self.scale * (brightness - 0.5), zeros - 1.0], dim=1)


class ScriptedExplainer:
    """Ranks the causal phrase first in texter mode and a distractor first in text-to-concept mode."""

    def __init__(self, bank: ConceptBank, embedder):
        self.bank = bank
        self.embedder = embedder

    def predicted_class(self, image) -> int:
        return 0

    def bank_slice(self, classes):
        return self.bank.texts(classes[0])

    def explain(self, mode, image, target_class, input_id, seed, k_con):
        texts = self.bank_slice([target_class])
        if mode is ExplainMode.TEXTER:
            ordered = self.bank.flagged(target_class, "causal") + [t for t in texts if "causal" not in self._flags(t)]
            results = [(t, 1.0) for t in ordered[:k_con]]
        elif mode is ExplainMode.TEXT_TO_CONCEPT:
            distractors = self.bank.flagged(target_class, "distractor")
            ordered = distractors + [t for t in texts if t not in distractors]
            results = [(t, 1.0) for t in ordered[:k_con]]
        else:
            results = random_descriptions(texts, k_con, seed)
        return Explanation(input_id, target_class, mode, k_con, results)

    def _flags(self, text):
        return next(e.flags for e in self.bank.entries(0) if e.text == text)


def _bank() -> ConceptBank:
    bank = ConceptBank()
    bank.add(0, "red square", "vlm", ("causal",))
    bank.add(0, "pale pink", "vlm", ("distractor",))
    bank.add(0, "striped backdrop", "vlm", ("distractor",))
    for filler in ("fuzzy tail", "shiny beak", "curly mane"):
        bank.add(0, filler, "llm", ("filler",))
    return bank


def _embedder(bank: ConceptBank) -> JointEmbedder:
    vocabulary = Vocabulary.build(bank.texts(0) + ["photo", "showing", "glorp"])
    return seeded_module(lambda: JointEmbedder(vocabulary, joint_dim=6, token_dim=6, hidden_dim=12), 0).eval()


class HelperTests(unittest.TestCase):
    def test_bootstrap_interval(self):
        self.assertEqual(bootstrap_ci([0.25] * 20, resamples=50), (0.25, 0.25))
        low, high = bootstrap_ci([0.0, 1.0] * 30, resamples=200, seed=1)
        self.assertLessEqual(low, 0.5)
        self.assertGreaterEqual(high, 0.5)
        self.assertEqual(bootstrap_ci([0.0, 1.0] * 30, resamples=200, seed=1), (low, high))
        self.assertTrue(all(math.isnan(v) for v in bootstrap_ci([])))

    def test_topk_size(self):
        self.assertEqual([topk_size(c) for c in (2, 3, 4, 5, 10)], [1, 2, 2, 5, 5])

    def test_image_seed_is_stable_and_distinct(self):
        seeds = [image_seed(0, i) for i in range(100)]
        self.assertEqual(len(set(seeds)), 100)
        self.assertEqual(seeds[5], image_seed(0, 5))
        self.assertNotEqual(image_seed(1, 5), seeds[5])
        self.assertTrue(all(0 <= s < 2 ** 63 for s in seeds))

    def test_ordered_map_keeps_input_order(self):
        items = list(range(40))
        self.assertEqual(ordered_map(lambda x: x * x, items, threads=4), [x * x for x in items])


class ValidityTests(unittest.TestCase):
    def test_identical_concept_images(self):
        image = np.full((8, 8, 3), 0.7, dtype=np.float32)
        report = validity_metrics(BrightnessClassifier(), [(image, image, 1), (image, image, 1)])
        self.assertEqual(report.n, 2)
        self.assertEqual(report.topk, 2)
        self.assertEqual(report.acc1, 1.0)
        self.assertAlmostEqual(report.r_conf, 1.0, places=9)
        self.assertAlmostEqual(report.cos, 1.0, places=9)
        self.assertIn("Acc_2", report.header)

    def test_zero_original_confidence_is_excluded(self):
        dark = np.zeros((8, 8, 3), dtype=np.float32)
        bright = np.ones((8, 8, 3), dtype=np.float32)
        classifier = BrightnessClassifier(scale=4000.0)
        report = validity_metrics(classifier, [(dark, bright, 1), (bright, bright, 1)])
        self.assertEqual(report.r_conf_excluded, 1)
        self.assertIsNone(report.records[0].r_conf)
        self.assertAlmostEqual(report.r_conf, 1.0, places=9)
        self.assertEqual(report.acc1, 1.0)

    def test_empty_input(self):
        with self.assertRaises(ValueError):
            validity_metrics(BrightnessClassifier(), [])

    def test_table_columns(self):
        image = np.full((8, 8, 3), 0.2, dtype=np.float32)
        report = validity_metrics(BrightnessClassifier(), [(image, image, 0)])
        table = validity_table([report])
        self.assertEqual(list(table.columns), ["space", "n", "Acc1", "Acc2", "R_conf", "Cos", "LPIPS"])


class ClipscoreTests(unittest.TestCase):
    def setUp(self):
        self.embedder = _embedder(_bank())
        self.image = np.full((16, 16, 3), 0.4, dtype=np.float32)

    def test_bare_descriptions_without_class(self):
        expected = float(torch.nn.functional.cosine_similarity(
            embed_images(self.embedder, self.image)[0].double(),
            embed_texts(self.embedder, ["red square"])[0].double(), dim=0))
        self.assertAlmostEqual(clipscore_analog(self.embedder, self.image, "", ["red square"]), expected, places=9)

    def test_class_prompt_is_deterministic(self):
        first = clipscore_analog(self.embedder, self.image, "glorp", ["red square", "pale pink"])
        self.assertEqual(first, clipscore_analog(self.embedder, self.image, "glorp", ["red square", "pale pink"]))
        self.assertTrue(-1.0 <= first <= 1.0)
        with self.assertRaises(ValueError):
            clipscore_analog(self.embedder, self.image, "glorp", [])


class FaithfulnessTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bank = _bank()
        cls.explainer = ScriptedExplainer(cls.bank, _embedder(cls.bank))
        cls.samples = generate(SceneSpec(side=16, n_classes=3, n_distractors=2), 6, seed=0)

    def _run(self, bank):
        return faithfulness_benchmark(self.explainer, self.samples, bank, ["glorp"], seed=0, k_con=3, resamples=100)

    def test_hits_follow_bank_flags(self):
        report = self._run(self.bank)
        texter, ttc = report.methods["texter"], report.methods["text-to-concept"]
        self.assertEqual(texter.causal_hit, 1.0)
        self.assertEqual(texter.distractor_hit, 0.0)
        self.assertEqual(texter.mean_causal_rank, 1.0)
        self.assertEqual(ttc.causal_hit, 0.0)
        self.assertEqual(ttc.distractor_hit, 1.0)
        self.assertEqual(ttc.mean_causal_rank, 3.0)
        self.assertEqual(report.bank_size, 6.0)
        self.assertAlmostEqual(report.random_expected_topk, 0.5)
        self.assertEqual(len(report.records), 18)
        self.assertIsNone(texter.clipscore_concept)

    def test_relabeling_swaps_hit_rates(self):
        report = self._run(self.bank)
        swapped = self._run(self.bank.relabeled({"causal": "distractor", "distractor": "causal"}))
        for method in ("texter", "text-to-concept", "random"):
            self.assertEqual(report.methods[method].causal_hit, swapped.methods[method].distractor_hit)
            self.assertEqual(report.methods[method].distractor_hit, swapped.methods[method].causal_hit)

    def test_random_runs_are_seed_stable(self):
        first, second = self._run(self.bank), self._run(self.bank)
        self.assertEqual([r.top for r in first.records], [r.top for r in second.records])

    def test_report_round_trip_and_tables(self):
        report = self._run(self.bank)
        self.assertEqual(FaithfulnessReport.from_dict(report.to_dict()), report)
        table = faithfulness_table(report)
        self.assertEqual(list(table["method"]), ["texter", "text-to-concept", "random"])
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_table(table, Path(tmpdir) / "nested" / "faithfulness.csv")
            reread = pd.read_csv(path)
        expected = [1.0, 0.0, report.methods["random"].causal_hit]
        for observed, value in zip(reread["causal_hit"], expected):
            self.assertAlmostEqual(float(observed), value, places=6)


if __name__ == "__main__":
    unittest.main()
