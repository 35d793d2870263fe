#!/usr/bin/env python3.10
"""
Run configuration for the explanation service.

A run is described by ONE JSON document (see ``config/texter.json``). Every
section maps onto a frozen dataclass; keys missing from the document take the
dataclass default and unknown keys are rejected.

Reference defaults of the method carry ``metadata={"reference": True}`` and
are flagged ``[ref]`` in the CLI help. No environment-variable layering: the
document plus ``--seed`` determine a run; ``describe()`` is the config echo.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

import orjson

CONFIG_ROOT = Path(__file__).resolve().parents[1] / "config"
CONFIG_FILE = CONFIG_ROOT / "texter.json"
CONFIG_VERSION = 1

T = TypeVar("T")


class ConfigError(ValueError):
    """Raised for unreadable documents, unknown keys and out-of-range values."""


def reference(default: Any) -> Any:
    return field(default=default, metadata={"reference": True})


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs/texter"
    data_dir: Optional[str] = None
    checkpoints_dir: Optional[str] = None
    bank_path: Optional[str] = None

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def data(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out / "data"

    @property
    def checkpoints(self) -> Path:
        return Path(self.checkpoints_dir) if self.checkpoints_dir else self.out / "checkpoints"

    @property
    def bank(self) -> Path:
        return Path(self.bank_path) if self.bank_path else self.data / "bank.jsonl"


@dataclass(frozen=True)
class DataConfig:
    side: int = 32
    n_classes: int = 4
    n_distractors: int = 4
    noise: float = 0.02
    marker_size: int = 8
    marker_jitter: int = 6
    n_train: int = 2000
    n_test: int = 200
    n_composites: int = 400
    bank_llm_size: int = 20
    bank_vlm_size: int = 10


@dataclass(frozen=True)
class ClassifierConfig:
    architecture: str = "cnn"
    feature_dim: int = 64
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    multilabel_threshold: float = reference(0.3)
    multilabel_epochs: int = 10


@dataclass(frozen=True)
class EmbedderConfig:
    joint_dim: int = 32
    token_dim: int = 32
    hidden_dim: int = 64
    temperature: float = 0.07
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64


@dataclass(frozen=True)
class SAEConfig:
    enabled: bool = True
    expansion: int = reference(8)
    topk_ratio: float = reference(0.10)
    lr: float = reference(5e-4)
    epochs: int = reference(10)
    batch_size: int = 64


@dataclass(frozen=True)
class AlignerConfig:
    method: str = "closed-form"
    fraction: float = reference(0.2)
    ridge: float = 1e-6
    sgd_steps: int = 2000
    sgd_lr: float = 1e-2


@dataclass(frozen=True)
class AttributionSettings:
    steps: int = reference(100)
    k_neu: int = reference(6)


@dataclass(frozen=True)
class VizSettings:
    iterations: int = reference(512)
    lr: float = 0.05
    reg_weight: float = 1e-3
    magnitude_source: str = "analytic"
    magnitude_samples: int = 256


@dataclass(frozen=True)
class CropSettings:
    count: int = reference(6)
    low: float = reference(0.25)
    high: float = reference(0.30)
    center_sigma: float = 0.125


@dataclass(frozen=True)
class ExplainSettings:
    k_con: int = reference(3)
    method: str = "texter"
    sample_indices: Tuple[int, ...] = (0, 1, 2, 3)
    whole_image_term: bool = False


@dataclass(frozen=True)
class EvaluateSettings:
    n_samples: int = 100
    bootstrap_resamples: int = 1000


@dataclass(frozen=True)
class BenchmarkSettings:
    n_images: int = 200
    methods: Tuple[str, ...] = ("texter", "text-to-concept", "random")
    bootstrap_resamples: int = 1000


SECTIONS: Dict[str, Type] = {
    "paths": PathsConfig,
    "data": DataConfig,
    "classifier": ClassifierConfig,
    "embedder": EmbedderConfig,
    "sae": SAEConfig,
    "aligner": AlignerConfig,
    "attribution": AttributionSettings,
    "viz": VizSettings,
    "crop": CropSettings,
    "explain": ExplainSettings,
    "evaluate": EvaluateSettings,
    "benchmark": BenchmarkSettings,
}
TOP_LEVEL_KEYS = {"version", "seed", "threads"}
REFERENCE_DEFAULTS: Dict[str, Any] = {
    f"{name}.{f.name}": f.default
    for name, cls in SECTIONS.items()
    for f in dataclasses.fields(cls)
    if f.metadata.get("reference")
}


def _build_section(section_cls: Type[T], name: str, raw: Dict[str, Any]) -> T:
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{name}' must be an object, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(section_cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return section_cls(**values)


def _validate(manager: "ConfigManager") -> None:
    checks = [
        (manager.data.n_classes >= 2, "data.n_classes must be >= 2"),
        (manager.data.side >= 8, "data.side must be >= 8"),
        (0.0 <= manager.data.noise <= 0.1, "data.noise must lie in [0, 0.1]"),
        (manager.classifier.architecture in ("cnn", "mlp"), "classifier.architecture must be 'cnn' or 'mlp'"),
        (manager.sae.expansion >= 1, "sae.expansion must be >= 1"),
        (0.0 < manager.sae.topk_ratio <= 1.0, "sae.topk_ratio must lie in (0, 1]"),
        (manager.aligner.method in ("closed-form", "sgd"), "aligner.method must be 'closed-form' or 'sgd'"),
        (0.0 < manager.aligner.fraction <= 1.0, "aligner.fraction must lie in (0, 1]"),
        (manager.attribution.steps >= 1, "attribution.steps must be >= 1"),
        (manager.attribution.k_neu >= 1, "attribution.k_neu must be >= 1"),
        (manager.viz.iterations >= 1, "viz.iterations must be >= 1"),
        (manager.viz.reg_weight >= 0.0, "viz.reg_weight must be >= 0"),
        (manager.viz.magnitude_source in ("dataset", "analytic"), "viz.magnitude_source must be 'dataset' or 'analytic'"),
        (0.0 < manager.crop.low <= manager.crop.high <= 1.0, "crop range must satisfy 0 < low <= high <= 1"),
        (manager.crop.count >= 1, "crop.count must be >= 1"),
        (manager.explain.k_con >= 1, "explain.k_con must be >= 1"),
        (manager.explain.method in ("texter", "text-to-concept", "random"), "explain.method must be texter, text-to-concept or random"),
        (manager.threads >= 1, "threads must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


class ConfigManager:
    """Singleton-capable view over one resolved run document."""

    _instance: Optional["ConfigManager"] = None

    def __init__(self, document: Dict[str, Any], source: Optional[str] = None):
        if not isinstance(document, dict):
            raise ConfigError("Configuration document must be a JSON object")
        unknown = sorted(set(document) - set(SECTIONS) - TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}")
        version = int(document.get("version", CONFIG_VERSION))
        if version != CONFIG_VERSION:
            raise ConfigError(f"Unsupported config version {version} (expected {CONFIG_VERSION})")
        self.source = source
        self._seed = int(document.get("seed", 0))
        self._threads = int(document.get("threads", 1))
        try:
            self._sections = {
                name: _build_section(cls, name, document.get(name, {}))
                for name, cls in SECTIONS.items()
            }
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        _validate(self)

    @classmethod
    def from_file(cls, config_path: Optional[Path] = None) -> "ConfigManager":
        config_path = Path(config_path or CONFIG_FILE)
        if not config_path.exists():
            raise ConfigError(f"Configuration file not found: {config_path}")
        try:
            document = orjson.loads(config_path.read_bytes())
        except orjson.JSONDecodeError as exc:
            raise ConfigError(f"Invalid JSON in {config_path}: {exc}") from exc
        return cls(document, source=str(config_path))

    @classmethod
    def instance(cls, config_path: Optional[Path] = None) -> "ConfigManager":
        if cls._instance is None:
            cls._instance = cls.from_file(config_path)
        return cls._instance

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None,
                       threads: Optional[int] = None) -> "ConfigManager":
        document = self.describe()
        if seed is not None:
            document["seed"] = int(seed)
        if out_dir is not None:
            document["paths"]["out_dir"] = str(out_dir)
        if threads is not None:
            document["threads"] = int(threads)
        return ConfigManager(document, source=self.source)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def threads(self) -> int:
        return self._threads

    @property
    def paths(self) -> PathsConfig:
        return self._sections["paths"]

    @property
    def data(self) -> DataConfig:
        return self._sections["data"]

    @property
    def classifier(self) -> ClassifierConfig:
        return self._sections["classifier"]

    @property
    def embedder(self) -> EmbedderConfig:
        return self._sections["embedder"]

    @property
    def sae(self) -> SAEConfig:
        return self._sections["sae"]

    @property
    def aligner(self) -> AlignerConfig:
        return self._sections["aligner"]

    @property
    def attribution(self) -> AttributionSettings:
        return self._sections["attribution"]

    @property
    def viz(self) -> VizSettings:
        return self._sections["viz"]

    @property
    def crop(self) -> CropSettings:
        return self._sections["crop"]

    @property
    def explain(self) -> ExplainSettings:
        return self._sections["explain"]

    @property
    def evaluate(self) -> EvaluateSettings:
        return self._sections["evaluate"]

    @property
    def benchmark(self) -> BenchmarkSettings:
        return self._sections["benchmark"]

    def describe(self) -> Dict[str, Any]:
        """Return the fully resolved document (the config echo)."""
        echo: Dict[str, Any] = {"version": CONFIG_VERSION, "seed": self._seed, "threads": self._threads}
        for name, section in self._sections.items():
            values = dataclasses.asdict(section)
            echo[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        return echo


def config_help() -> str:
    """One line per config key with its default; reference defaults marked ``[ref]``."""
    lines: List[str] = ["config keys (default); [ref] marks reference defaults of the method:",
                        "  seed (0)", "  threads (1)"]
    for name, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else None
            flag = " [ref]" if f.metadata.get("reference") else ""
            lines.append(f"  {name}.{f.name} ({default}){flag}")
    return "\n".join(lines)


def reset_config_cache() -> None:
    """Utility for tests to reload configuration between runs."""
    ConfigManager._instance = None
