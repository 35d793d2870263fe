#!/usr/bin/env python3.10
"""
Synthetic scenes whose label is decided by a small marker (the causal
attribute) while a full-frame backdrop (the distractor) varies independently
of the label.

Randomness is portable: every sample draws from its own xorshift64* stream
seeded through splitmix64 from ``(seed, index)``, so sample ``i`` depends on
nothing but the scene spec, the seed and ``i``. Pixel noise comes from a numpy
PCG64 generator seeded by that stream.

    splitmix64:  x += 0x9E3779B97F4A7C15
                 z = (x ^ x >> 30) * 0xBF58476D1CE4E5B9
                 z = (z ^ z >> 27) * 0x94D049BB133111EB
                 return z ^ z >> 31
    xorshift64*: x ^= x >> 12; x ^= x << 25; x ^= x >> 27
                 return x * 0x2545F4914F6CDD1D
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from common_utilities import LOGGER, LOG_LEVEL, ensure_dir, read_jsonl, read_ppm, resolve_logger, write_jsonl, write_ppm
from utilities.Datatypes import BankFlag, BankSource
from utilities.request_models import DatasetRecord

from .Explanation_Task.conceptbank import ConceptBank

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB
XORSHIFT_MULTIPLIER = 0x2545F4914F6CDD1D
MAX_CAUSAL_FRACTION = 0.10
COMPOSITE_SALT = 0xC0FFEE
BANK_SALT = 0xB4A4C


def splitmix64(value: int) -> int:
    value = (value + GOLDEN_GAMMA) & MASK64
    value = ((value ^ (value >> 30)) * MIX_1) & MASK64
    value = ((value ^ (value >> 27)) * MIX_2) & MASK64
    return value ^ (value >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or GOLDEN_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * XORSHIFT_MULTIPLIER) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        # Rejection sampling keeps the draw exactly uniform
        limit = MASK64 - (MASK64 % n) - 1
        while True:
            value = self.next_u64()
            if value <= limit:
                return value % n

    def shuffle(self, items: List) -> List:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def sample_stream(seed: int, index: int, salt: int = 0) -> XorShift64Star:
    return XorShift64Star(splitmix64((splitmix64(seed & MASK64) ^ salt) & MASK64) + index)


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
# Attribute tables

Glyph = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def _square(u, v, m):
    return np.ones_like(u, dtype=bool)


def _cross(u, v, m):
    half = max(1, m // 6)
    c = (m - 1) / 2.0
    return (np.abs(u - c) <= half) | (np.abs(v - c) <= half)


def _ring(u, v, m):
    c = (m - 1) / 2.0
    r = np.hypot(u - c, v - c)
    return (r <= m / 2.0) & (r >= m / 4.0)


def _triangle(u, v, m):
    c = (m - 1) / 2.0
    return np.abs(u - c) <= (v + 1) / 2.0


def _diamond(u, v, m):
    c = (m - 1) / 2.0
    return np.abs(u - c) + np.abs(v - c) <= m / 2.0


def _bar(u, v, m):
    return (v >= m // 3) & (v < m - m // 3)


def _disk(u, v, m):
    c = (m - 1) / 2.0
    return np.hypot(u - c, v - c) <= m / 2.0


def _frame(u, v, m):
    return (u == 0) | (v == 0) | (u == m - 1) | (v == m - 1)


@dataclass(frozen=True)
class Marker:
    phrase: str
    color: Tuple[float, float, float]
    glyph: Glyph


CAUSAL_MARKERS: Tuple[Marker, ...] = (
    Marker("red square", (0.95, 0.10, 0.10), _square),
    Marker("green cross", (0.10, 0.85, 0.15), _cross),
    Marker("blue ring", (0.10, 0.20, 0.95), _ring),
    Marker("yellow triangle", (0.95, 0.90, 0.10), _triangle),
    Marker("magenta diamond", (0.90, 0.10, 0.85), _diamond),
    Marker("cyan bar", (0.10, 0.90, 0.90), _bar),
    Marker("orange disk", (1.00, 0.55, 0.05), _disk),
    Marker("white frame", (1.00, 1.00, 1.00), _frame),
)

CLASS_NAMES: Tuple[str, ...] = ("glorp", "vintle", "quasset", "drimble", "snorl", "frazzet", "plonket", "zibbet")


@dataclass(frozen=True)
class Distractor:
    phrases: Tuple[str, str]
    color: Tuple[float, float, float]
    pattern: str

    @property
    def name(self) -> str:
        return self.phrases[0]


# Palettes of up to five backdrops leave out the near-neutral slate one
DISTRACTORS: Tuple[Distractor, ...] = (
    Distractor(("striped backdrop", "pale pink"), (0.85, 0.62, 0.66), "stripes"),
    Distractor(("dotted backdrop", "olive tone"), (0.50, 0.52, 0.25), "dots"),
    Distractor(("wavy backdrop", "lavender tone"), (0.66, 0.58, 0.80), "waves"),
    Distractor(("grid backdrop", "teal shade"), (0.20, 0.50, 0.50), "grid"),
    Distractor(("gradient backdrop", "sand beige"), (0.80, 0.72, 0.55), "gradient"),
    Distractor(("checkered backdrop", "slate gray"), (0.45, 0.50, 0.55), "checker"),
)

FILLER_ADJECTIVES = (
    "fuzzy", "shiny", "tiny", "giant", "smooth", "rough", "curly", "bumpy", "glossy", "matte",
    "spotted", "hollow", "narrow", "wide", "bent", "twisted", "soft", "sharp", "metallic", "wooden",
    "rusty", "faded", "woven", "frozen",
)
FILLER_NOUNS = (
    "whiskers", "feathers", "wheel", "handle", "antenna", "petals", "scales", "tail", "beak", "hooves",
    "fins", "shell", "paws", "horns", "wings", "mane", "leaves", "bark", "spout", "lid",
)


def _texture(pattern: str, side: int) -> np.ndarray:
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    if pattern == "stripes":
        return 0.5 + 0.5 * np.sign(np.sin(2.0 * math.pi * x / 6.0))
    if pattern == "checker":
        return ((x // 4 + y // 4) % 2).astype(np.float64)
    if pattern == "dots":
        return ((np.hypot((x % 6) - 2.5, (y % 6) - 2.5)) <= 1.5).astype(np.float64)
    if pattern == "waves":
        return 0.5 + 0.5 * np.sin(2.0 * math.pi * (x + 3.0 * np.sin(2.0 * math.pi * y / 12.0)) / 8.0)
    if pattern == "gradient":
        return (x + y) / max(1.0, 2.0 * (side - 1))
    if pattern == "grid":
        return ((x % 5 == 0) | (y % 5 == 0)).astype(np.float64)
    raise ValueError(f"Unknown backdrop pattern '{pattern}'")


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
@dataclass(frozen=True)
class SceneSpec:
    side: int = 32
    n_classes: int = 4
    n_distractors: int = 4
    noise: float = 0.02
    marker_size: int = 8
    marker_jitter: int = 6

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"Scene needs at least 2 classes, got {self.n_classes}")
        if self.side < 8:
            raise ValueError(f"Scene side must be >= 8 pixels, got {self.side}")
        if self.n_classes > len(CAUSAL_MARKERS):
            raise ValueError(f"At most {len(CAUSAL_MARKERS)} classes are available, got {self.n_classes}")
        if not 1 <= self.n_distractors <= len(DISTRACTORS):
            raise ValueError(f"n_distractors must lie in [1, {len(DISTRACTORS)}], got {self.n_distractors}")
        if not 0.0 <= self.noise <= 0.1:
            raise ValueError(f"noise must lie in [0, 0.1], got {self.noise}")

    @classmethod
    def from_config(cls, data_config) -> "SceneSpec":
        return cls(
            side=data_config.side,
            n_classes=data_config.n_classes,
            n_distractors=data_config.n_distractors,
            noise=data_config.noise,
            marker_size=data_config.marker_size,
            marker_jitter=data_config.marker_jitter,
        )

    @property
    def marker_side(self) -> int:
        cap = max(2, int(math.floor(self.side * math.sqrt(MAX_CAUSAL_FRACTION))))
        return max(2, min(self.marker_size, cap))

    @property
    def markers(self) -> Tuple[Marker, ...]:
        return CAUSAL_MARKERS[: self.n_classes]

    @property
    def distractors(self) -> Tuple[Distractor, ...]:
        return DISTRACTORS[: self.n_distractors]

    @property
    def class_names(self) -> Tuple[str, ...]:
        return CLASS_NAMES[: self.n_classes]

    def causal_phrase(self, label: int) -> str:
        return self.markers[label].phrase


@dataclass
class Sample:
    index: int
    image: np.ndarray
    label: int
    causal: str
    distractor: str
    captions: Tuple[str, ...]
    labels: Tuple[int, ...] = ()
    marker_boxes: Tuple[Tuple[int, int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.labels:
            self.labels = (self.label,)


@lru_cache(maxsize=64)
def _backdrop(spec: SceneSpec, distractor_index: int) -> np.ndarray:
    distractor = spec.distractors[distractor_index]
    texture = _texture(distractor.pattern, spec.side)
    color = np.asarray(distractor.color, dtype=np.float64)
    backdrop = color[None, None, :] * (0.6 + 0.4 * texture[:, :, None])
    backdrop.setflags(write=False)
    return backdrop


def _paint_marker(image: np.ndarray, marker: Marker, top: int, left: int, m: int) -> None:
    v, u = np.mgrid[0:m, 0:m]
    mask = marker.glyph(u.astype(np.float64), v.astype(np.float64), m)
    region = image[top:top + m, left:left + m]
    region[mask] = np.asarray(marker.color, dtype=np.float64)


def _jittered(rng: XorShift64Star, center: float, jitter: int, low: int, high: int) -> int:
    offset = rng.randint(2 * jitter + 1) - jitter if jitter > 0 else 0
    return int(min(max(int(round(center)) + offset, low), high))


def _finish(image: np.ndarray, spec: SceneSpec, rng: XorShift64Star) -> np.ndarray:
    if spec.noise > 0.0:
        noise_rng = np.random.Generator(np.random.PCG64(rng.next_u64()))
        image = image + noise_rng.normal(0.0, spec.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _captions(spec: SceneSpec, labels: Sequence[int], distractor: Distractor) -> Tuple[str, ...]:
    return tuple(spec.causal_phrase(c) for c in labels) + distractor.phrases


def generate_sample(spec: SceneSpec, seed: int, index: int) -> Sample:
    label_offset = splitmix64(seed & MASK64) % spec.n_classes
    label = (index + label_offset) % spec.n_classes
    rng = sample_stream(seed, index)
    distractor_index = rng.randint(spec.n_distractors)
    distractor = spec.distractors[distractor_index]
    m = spec.marker_side
    center = (spec.side - m) / 2.0
    top = _jittered(rng, center, spec.marker_jitter, 0, spec.side - m)
    left = _jittered(rng, center, spec.marker_jitter, 0, spec.side - m)
    image = np.array(_backdrop(spec, distractor_index), dtype=np.float64)
    _paint_marker(image, spec.markers[label], top, left, m)
    return Sample(
        index=index,
        image=_finish(image, spec, rng),
        label=label,
        causal=spec.causal_phrase(label),
        distractor=distractor.name,
        captions=_captions(spec, [label], distractor),
        marker_boxes=((top, left, m),),
    )


def generate(spec: SceneSpec, n: int, seed: int, start: int = 0) -> List[Sample]:
    """Samples ``start .. start + n - 1``; labels cycle so each class gets n/C +- 1."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [generate_sample(spec, seed, start + i) for i in range(n)]


def generate_composites(spec: SceneSpec, n: int, seed: int, start: int = 0) -> List[Sample]:
    """Two markers of distinct classes, one per image half, with multi-hot labels."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = spec.marker_side
    half = spec.side // 2
    if half < m:
        raise ValueError(f"side {spec.side} is too small for two {m}px markers")
    samples = []
    for index in range(start, start + n):
        rng = sample_stream(seed, index, COMPOSITE_SALT)
        first = rng.randint(spec.n_classes)
        second = (first + 1 + rng.randint(spec.n_classes - 1)) % spec.n_classes
        distractor_index = rng.randint(spec.n_distractors)
        distractor = spec.distractors[distractor_index]
        image = np.array(_backdrop(spec, distractor_index), dtype=np.float64)
        boxes = []
        for label, (low, high) in zip((first, second), ((0, half - m), (half, spec.side - m))):
            top = _jittered(rng, (spec.side - m) / 2.0, spec.marker_jitter, 0, spec.side - m)
            left = low + rng.randint(high - low + 1)
            _paint_marker(image, spec.markers[label], top, left, m)
            boxes.append((top, left, m))
        labels = tuple(sorted((first, second)))
        samples.append(Sample(
            index=index,
            image=_finish(image, spec, rng),
            label=first,
            causal=spec.causal_phrase(first),
            distractor=distractor.name,
            captions=_captions(spec, labels, distractor),
            labels=labels,
            marker_boxes=tuple(boxes),
        ))
    return samples


def causal_mask(sample: Sample, side: Optional[int] = None) -> np.ndarray:
    """Boolean H x W mask of the marker boxes."""
    side = side or sample.image.shape[0]
    mask = np.zeros((side, side), dtype=bool)
    for top, left, m in sample.marker_boxes:
        mask[top:top + m, left:left + m] = True
    return mask


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def _filler_pool(spec: SceneSpec) -> List[str]:
    grounded = {token for marker in spec.markers for token in marker.phrase.split()}
    grounded |= {token for d in spec.distractors for phrase in d.phrases for token in phrase.split()}
    grounded |= set(spec.class_names)
    return [
        f"{adjective} {noun}"
        for adjective in FILLER_ADJECTIVES
        for noun in FILLER_NOUNS
        if adjective not in grounded and noun not in grounded
    ]


def attribute_bank(spec: SceneSpec, llm_size: int = 20, vlm_size: int = 10, seed: int = 0,
                   logger: Union[LOGGER, str, None] = None) -> ConceptBank:
    """Ground-truth bank: the class's causal phrase, every distractor phrase, and fillers.

    The ``vlm`` slice holds the grounded phrases topped up with fillers to
    ``vlm_size``; the ``llm`` slice holds ``llm_size`` fillers. At 100 + 30
    each class holds 130 descriptions.
    """
    logs = resolve_logger(logger)
    pool = _filler_pool(spec)
    grounded = 1 + 2 * spec.n_distractors
    needed = llm_size + max(0, vlm_size - grounded)
    if needed > len(pool):
        raise ValueError(f"Requested {needed} filler phrases per class but only {len(pool)} exist")
    bank = ConceptBank(provenance={"generator": "synthdata", "seed": seed, "llm_size": llm_size, "vlm_size": vlm_size})
    for label in range(spec.n_classes):
        fillers = sample_stream(seed, label, BANK_SALT).shuffle(list(pool))
        bank.add(label, spec.causal_phrase(label), BankSource.VLM, (BankFlag.CAUSAL.value,))
        for distractor in spec.distractors:
            for phrase in distractor.phrases:
                bank.add(label, phrase, BankSource.VLM, (BankFlag.DISTRACTOR.value,))
        cursor = 0
        while bank.size(label) < max(vlm_size, grounded):
            bank.add(label, fillers[cursor], BankSource.VLM, (BankFlag.FILLER.value,))
            cursor += 1
        for phrase in fillers[cursor:cursor + llm_size]:
            bank.add(label, phrase, BankSource.LLM, (BankFlag.FILLER.value,))
    logs.write_logs(f"Built attribute bank: {spec.n_classes} classes x {bank.size(0)} descriptions", LOG_LEVEL.DEBUG)
    return bank


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def export_dataset(samples: Sequence[Sample], directory: Union[str, Path]) -> Path:
    """Write ``images/<index>.ppm`` plus ``manifest.jsonl``; returns the manifest path."""
    directory = ensure_dir(directory)
    records = []
    for sample in samples:
        relative = f"images/{sample.index:05d}.ppm"
        write_ppm(sample.image, directory / relative)
        records.append(DatasetRecord(
            path=relative,
            index=sample.index,
            label=sample.label,
            labels=list(sample.labels),
            causal=sample.causal,
            distractors=[sample.distractor],
            captions=list(sample.captions),
            marker_boxes=[list(box) for box in sample.marker_boxes],
        ).model_dump())
    manifest = directory / "manifest.jsonl"
    write_jsonl(records, manifest)
    return manifest


def load_dataset(directory: Union[str, Path]) -> List[Sample]:
    directory = Path(directory)
    manifest = directory / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {manifest}")
    samples = []
    for raw in read_jsonl(manifest):
        record = DatasetRecord.model_validate(raw)
        samples.append(Sample(
            index=record.index,
            image=read_ppm(directory / record.path),
            label=record.label,
            causal=record.causal,
            distractor=record.distractors[0],
            captions=tuple(record.captions),
            labels=tuple(record.labels),
            marker_boxes=tuple(tuple(box) for box in record.marker_boxes),
        ))
    return samples


def spec_summary(spec: SceneSpec) -> Dict[str, object]:
    return {
        "class_names": list(spec.class_names),
        "causal_phrases": [marker.phrase for marker in spec.markers],
        "distractors": [list(d.phrases) for d in spec.distractors],
        "marker_side": spec.marker_side,
    }
