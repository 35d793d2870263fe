#!/usr/bin/env python3.10
from enum import Enum, IntEnum


class ExplainMode(Enum):
    TEXTER = "texter"
    TEXT_TO_CONCEPT = "text-to-concept"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: str) -> "ExplainMode":
        aliases = {"ttc": cls.TEXT_TO_CONCEPT}
        return aliases.get(value) or cls(value)


class FeatureSpace(Enum):
    RAW = "raw"
    SAE = "sae"


class BankSource(Enum):
    LLM = "llm"
    VLM = "vlm"
    SYNTHETIC = "synthetic"


class BankFlag(Enum):
    CAUSAL = "causal"
    DISTRACTOR = "distractor"
    FILLER = "filler"


class PromptRole(Enum):
    LLM = "llm"
    VLM = "vlm"


class MagnitudeSource(Enum):
    DATASET = "dataset"
    ANALYTIC = "analytic"


class AlignMethod(Enum):
    CLOSED_FORM = "closed-form"
    SGD = "sgd"


class Stage(Enum):
    GEN_DATA = "gen-data"
    TRAIN_CLASSIFIER = "train-classifier"
    TRAIN_EMBEDDER = "train-embedder"
    TRAIN_SAE = "train-sae"
    TRAIN_ALIGNER = "train-aligner"
    EXPLAIN = "explain"
    EVALUATE = "evaluate"
    BENCH_FAITHFULNESS = "bench-faithfulness"


class ExitCode(IntEnum):
    OK = 0
    UNEXPECTED = 1
    CONFIG = 2
    IO = 3
    NUMERIC = 4
    MISSING_PREREQUISITE = 5
