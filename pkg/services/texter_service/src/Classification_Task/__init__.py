__all__ = ["ClassifierModel", "JointEmbedder", "train_classifier", "train_embedder", "finetune_multilabel_head"]
from .classifier import ClassifierModel, finetune_multilabel_head, train_classifier
from .embedder import JointEmbedder, train_embedder
