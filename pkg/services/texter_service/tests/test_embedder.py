import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "..")))

import torch

from common_utilities.config_manager import EmbedderConfig
from src.Classification_Task.embedder import (
    JointEmbedder,
    Vocabulary,
    contrastive_loss,
    embed_images,
    embed_texts,
    retrieval_top1,
    tokenize,
    train_embedder,
)
from src.synthdata import SceneSpec, generate

SPEC = SceneSpec(side=16, n_classes=3, n_distractors=2)
CONFIG = EmbedderConfig(joint_dim=8, token_dim=8, hidden_dim=16, epochs=3, batch_size=32)


class VocabularyTests(unittest.TestCase):
    def test_tokenize_strips_punctuation(self):
        self.assertEqual(tokenize("Red, Square!"), ["red", "square"])

    def test_build_sorts_and_reserves_unknown(self):
        vocabulary = Vocabulary.build(["red square", "blue ring"])
        self.assertEqual(vocabulary.tokens, ["<unk>", "blue", "red", "ring", "square"])
        self.assertEqual(vocabulary.encode("red kettle"), [2, 0])
        self.assertEqual(vocabulary.encode("!!"), [0])

    def test_embedder_needs_tokens_and_positive_temperature(self):
        with self.assertRaises(ValueError):
            JointEmbedder(Vocabulary())
        with self.assertRaises(ValueError):
            JointEmbedder(Vocabulary(["red"]), temperature=0.0)


class ContrastiveLossTests(unittest.TestCase):
    def test_matching_pairs_score_lower_than_shuffled(self):
        vectors = torch.eye(4)
        match = torch.eye(4)
        aligned = contrastive_loss(vectors, vectors, match, 0.1)
        shuffled = contrastive_loss(vectors, vectors[[1, 2, 3, 0]], match, 0.1)
        self.assertLess(float(aligned), float(shuffled))

    def test_multiple_positives_share_the_target(self):
        image = torch.tensor([[1.0, 0.0]])
        texts = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
        loss = contrastive_loss(image, texts, torch.ones(1, 2), 1.0)
        self.assertAlmostEqual(float(loss), float(torch.log(torch.tensor(2.0))) * 0.5, places=6)


class TrainEmbedderTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.samples = generate(SPEC, 48, seed=1)
        cls.embedder, cls.losses = train_embedder(cls.samples, CONFIG, seed=1, extra_texts=["fuzzy tail"])

    def test_outputs_are_unit_vectors(self):
        images = embed_images(self.embedder, self.samples[:5])
        texts = embed_texts(self.embedder, ["red square", "fuzzy tail", "never seen"])
        self.assertEqual(tuple(images.shape), (5, 8))
        self.assertTrue(torch.allclose(images.norm(dim=1), torch.ones(5), atol=1e-5))
        self.assertTrue(torch.allclose(texts.norm(dim=1), torch.ones(3), atol=1e-5))

    def test_extra_texts_widen_vocabulary(self):
        self.assertIn("fuzzy", self.embedder.vocabulary.index)
        self.assertEqual(len(self.losses), CONFIG.epochs)
        self.assertTrue(all(loss == loss for loss in self.losses))

    def test_training_is_deterministic(self):
        again, losses = train_embedder(self.samples, CONFIG, seed=1, extra_texts=["fuzzy tail"])
        self.assertEqual(losses, self.losses)
        self.assertTrue(torch.equal(embed_texts(again, ["red square"]), embed_texts(self.embedder, ["red square"])))

    def test_save_then_load(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            loaded = JointEmbedder.load(self.embedder.save(Path(tmpdir) / "embedder.txck"))
        self.assertEqual(loaded.vocabulary.tokens, self.embedder.vocabulary.tokens)
        self.assertTrue(torch.equal(embed_images(loaded, self.samples[:3]), embed_images(self.embedder, self.samples[:3])))

    def test_retrieval_score_is_a_rate(self):
        score = retrieval_top1(self.embedder, self.samples[:10], ["red square", "green cross", "blue ring"])
        self.assertGreaterEqual(score, 0.0)
        self.assertLessEqual(score, 1.0)

    def test_empty_text_and_self_similarity(self):
        empty = embed_texts(self.embedder, [""])
        self.assertAlmostEqual(float(empty.norm()), 1.0, places=5)
        images = embed_images(self.embedder, self.samples[:4])
        again = embed_images(self.embedder, self.samples[:4])
        self.assertTrue(torch.allclose((images * again).sum(dim=1), torch.ones(4), atol=1e-5))

    def test_too_little_data(self):
        with self.assertRaises(ValueError):
            train_embedder([], CONFIG, seed=0)


if __name__ == "__main__":
    unittest.main()
