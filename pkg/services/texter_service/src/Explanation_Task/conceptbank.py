#!/usr/bin/env python3.10
"""
Per-class description sets and the offline-first generation path.

Bank file: UTF-8 JSON lines ``{"class": int, "source": "llm"|"vlm"|"synthetic",
"text": str, "flags": [...]}``. Texts are normalised (trim, lowercase,
collapsed whitespace) and deduplicated per class on the normalised form.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import orjson
from pydantic import ValidationError

from common_utilities import LOGGER, LOG_LEVEL, iter_jsonl_lines, resolve_logger, write_jsonl
from common_utilities.config_manager import CONFIG_ROOT
from utilities.Datatypes import BankSource, PromptRole
from utilities.request_models import BankLine

from ..errors import BankFormatError, ConceptClientError

MAX_BANK_TOKENS = 5
MAX_GENERATED_TOKENS = 3
MAX_PHRASES_PER_CALL = 10
PROMPTS_DIR = CONFIG_ROOT / "prompts"
_SPLIT_PATTERN = re.compile(r"[\n/,;]+")
_BULLET_PATTERN = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")


def normalize_phrase(text: str) -> str:
    return " ".join(text.strip().lower().split())


@dataclass(frozen=True)
class BankEntry:
    text: str
    source: str
    flags: Tuple[str, ...] = ()


class ConceptBank:
    """Class id -> ordered, deduplicated descriptions. Treat as read-only once built."""

    def __init__(self, provenance: Optional[Dict] = None):
        self._entries: Dict[int, List[BankEntry]] = {}
        self._seen: Dict[int, set] = {}
        self.provenance: Dict = dict(provenance or {})

    def add(self, class_id: int, text: str, source: Union[str, BankSource] = BankSource.SYNTHETIC,
            flags: Iterable[str] = ()) -> bool:
        """Insert a description; returns False when it duplicates an existing one."""
        if class_id < 0:
            raise BankFormatError(f"class id must be >= 0, got {class_id}")
        source = BankSource(source).value
        phrase = normalize_phrase(text)
        tokens = phrase.split()
        if not 1 <= len(tokens) <= MAX_BANK_TOKENS:
            raise BankFormatError(f"description '{text}' must have 1-{MAX_BANK_TOKENS} tokens")
        seen = self._seen.setdefault(class_id, set())
        if phrase in seen:
            return False
        seen.add(phrase)
        self._entries.setdefault(class_id, []).append(BankEntry(phrase, source, tuple(flags)))
        return True

    def classes(self) -> List[int]:
        return sorted(self._entries)

    def entries(self, class_id: int) -> List[BankEntry]:
        if class_id not in self._entries:
            raise KeyError(f"class {class_id} is not in the concept bank")
        return list(self._entries[class_id])

    def texts(self, class_id: int) -> List[str]:
        return [entry.text for entry in self.entries(class_id)]

    def size(self, class_id: int) -> int:
        return len(self._entries.get(class_id, ()))

    def flagged(self, class_id: int, flag: str) -> List[str]:
        return [entry.text for entry in self.entries(class_id) if flag in entry.flags]

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._entries

    def to_lines(self) -> List[BankLine]:
        return [
            BankLine(class_id=class_id, source=entry.source, text=entry.text, flags=list(entry.flags))
            for class_id in self.classes()
            for entry in self._entries[class_id]
        ]

    def relabeled(self, flag_map: Dict[str, str]) -> "ConceptBank":
        """Copy with flags renamed through ``flag_map`` (unmapped flags kept)."""
        copy = ConceptBank(provenance=self.provenance)
        for class_id in self.classes():
            for entry in self._entries[class_id]:
                copy.add(class_id, entry.text, entry.source, tuple(flag_map.get(f, f) for f in entry.flags))
        return copy


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


def load_bank(path: Union[str, Path], n_classes: Optional[int] = None,
              logger: Union[LOGGER, str, None] = None) -> ConceptBank:
    logs = resolve_logger(logger)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Concept bank not found: {path}")
    bank = ConceptBank(provenance={"path": str(path)})
    duplicates = 0
    for line_number, raw in iter_jsonl_lines(path):
        try:
            line = BankLine.model_validate(orjson.loads(raw))
        except orjson.JSONDecodeError as exc:
            raise BankFormatError(f"invalid JSON ({exc})", line_number) from exc
        except ValidationError as exc:
            raise BankFormatError(f"invalid bank line ({exc.errors()[0]['msg']})", line_number) from exc
        if n_classes is not None and line.class_id >= n_classes:
            raise BankFormatError(f"class {line.class_id} outside [0, {n_classes})", line_number)
        try:
            added = bank.add(line.class_id, line.text, line.source, line.flags)
        except BankFormatError as exc:
            raise BankFormatError(str(exc), line_number) from exc
        duplicates += 0 if added else 1
    if not bank.classes():
        raise BankFormatError(f"concept bank {path} has no classes")
    if duplicates:
        logs.write_logs(f"Removed {duplicates} duplicate description(s) from {path}", LOG_LEVEL.DEBUG)
    return bank


def save_bank(bank: ConceptBank, path: Union[str, Path]) -> Path:
    path = Path(path)
    write_jsonl((line.model_dump(by_alias=True) for line in bank.to_lines()), path)
    return path


def compose_entries(bank: ConceptBank, classes: Iterable[int]) -> List[Tuple[int, BankEntry]]:
    """Union of the listed classes' entries, ordered by class then insertion, first occurrence kept."""
    classes = sorted(set(int(c) for c in classes))
    if not classes:
        raise ValueError("compose needs at least one class")
    seen = set()
    composed = []
    for class_id in classes:
        for entry in bank.entries(class_id):
            if entry.text in seen:
                continue
            seen.add(entry.text)
            composed.append((class_id, entry))
    return composed


def compose(bank: ConceptBank, classes: Iterable[int]) -> List[str]:
    return [entry.text for _, entry in compose_entries(bank, classes)]


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////


@dataclass(frozen=True)
class PromptTemplate:
    role: PromptRole
    text: str
    placeholders: Tuple[str, ...] = field(default=("{class_name}", "{existing_concepts}"))

    def __post_init__(self):
        for placeholder in self.placeholders:
            count = self.text.count(placeholder)
            if count != 1:
                raise ValueError(f"{self.role.value} template must contain {placeholder} exactly once, found {count}")

    def render(self, class_name: str, existing: Sequence[str]) -> str:
        listing = ", ".join(existing) if existing else "none yet"
        return self.text.replace("{class_name}", class_name).replace("{existing_concepts}", listing)


def load_prompt_template(role: Union[str, PromptRole], prompts_dir: Optional[Path] = None) -> PromptTemplate:
    role = PromptRole(role)
    path = Path(prompts_dir or PROMPTS_DIR) / f"{role.value}_concepts.txt"
    return PromptTemplate(role=role, text=path.read_text(encoding="utf-8"))


class ConceptClient(Protocol):
    def complete(self, prompt: str) -> str:
        ...


class StaticClient:
    """Offline client replaying canned responses; ``failures`` leading calls raise."""

    def __init__(self, responses: Sequence[str], failures: int = 0):
        if not responses:
            raise ValueError("StaticClient needs at least one response")
        self.responses = list(responses)
        self.failures = failures
        self.calls = 0
        self.prompts: List[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        self.calls += 1
        if self.calls <= self.failures:
            raise ConceptClientError(f"static client failure #{self.calls}", retryable=True)
        return self.responses[(self.calls - self.failures - 1) % len(self.responses)]


def _mentions(phrase: str, name: str) -> bool:
    return bool(name) and f" {name} " in f" {phrase} "


def parse_phrases(raw: str, class_name: str, existing: Iterable[str],
                  max_phrases: int = MAX_PHRASES_PER_CALL) -> List[str]:
    name = normalize_phrase(class_name)
    seen = {normalize_phrase(t) for t in existing}
    phrases = []
    for chunk in _SPLIT_PATTERN.split(raw):
        phrase = normalize_phrase(_BULLET_PATTERN.sub("", chunk).strip(" .\"'"))
        if not 1 <= len(phrase.split()) <= MAX_GENERATED_TOKENS:
            continue
        if _mentions(phrase, name) or phrase in seen:
            continue
        seen.add(phrase)
        phrases.append(phrase)
        if len(phrases) >= max_phrases:
            break
    return phrases


def generate_via_client(template: PromptTemplate, class_name: str, existing: Sequence[str],
                        client: ConceptClient, max_phrases: int = MAX_PHRASES_PER_CALL) -> List[str]:
    """One prompt round-trip; returns at most ``max_phrases`` new, filtered phrases."""
    prompt = template.render(class_name, existing)
    try:
        raw = client.complete(prompt)
    except ConceptClientError:
        raise
    except Exception as exc:
        raise ConceptClientError(f"concept client failed: {exc}", retryable=True) from exc
    return parse_phrases(raw, class_name, existing, max_phrases)


def grow_bank(bank: ConceptBank, class_id: int, template: PromptTemplate, class_name: str,
              client: ConceptClient, target_size: int, max_rounds: int = 10, max_retries: int = 2,
              logger: Union[LOGGER, str, None] = None) -> int:
    """Query ``client`` until the class holds ``target_size`` descriptions. Returns the number added."""
    logs = resolve_logger(logger)
    source = BankSource.LLM if template.role is PromptRole.LLM else BankSource.VLM
    added = 0
    for round_index in range(max_rounds):
        if bank.size(class_id) >= target_size:
            break
        existing = bank.texts(class_id) if class_id in bank else []
        for attempt in range(max_retries + 1):
            try:
                phrases = generate_via_client(template, class_name, existing, client)
                break
            except ConceptClientError as exc:
                if not exc.retryable or attempt == max_retries:
                    raise
                logs.write_logs(f"Concept client retry {attempt + 1} for '{class_name}': {exc}", LOG_LEVEL.WARNING)
        if not phrases:
            logs.write_logs(f"Round {round_index}: no new phrases for '{class_name}'", LOG_LEVEL.WARNING)
        for phrase in phrases[: max(0, target_size - bank.size(class_id))]:
            added += int(bank.add(class_id, phrase, source))
    return added
