__all__ = ["Aligner", "train_aligner", "ConceptBank", "load_bank", "compose", "TexterExplainer", "crop_patches", "rank_descriptions"]
from .alignment import Aligner, train_aligner
from .conceptbank import ConceptBank, compose, load_bank
from .explain import TexterExplainer, crop_patches, rank_descriptions
