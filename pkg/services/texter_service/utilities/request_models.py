from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class BankLine(BaseModel):
    """One description of a concept bank file."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    class_id: int = Field(alias="class", ge=0)
    source: Literal["llm", "vlm", "synthetic"]
    text: str = Field(min_length=1)
    flags: List[str] = Field(default_factory=list)


class DatasetRecord(BaseModel):
    """One manifest line of an exported synthetic dataset."""

    model_config = ConfigDict(extra="forbid")

    path: str
    label: int = Field(ge=0)
    labels: List[int]
    causal: str
    distractors: List[str]
    captions: List[str]
    marker_boxes: List[List[int]]
    index: int = Field(ge=0)


class RankedText(BaseModel):
    text: str
    score: float


class ExplanationRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    input: str
    class_id: int = Field(alias="class")
    mode: str
    space: str
    k_con: int
    results: List[RankedText]
    neurons: List[int] = Field(default_factory=list)
    concept_image_path: Optional[str] = None
    seeds: Dict[str, int] = Field(default_factory=dict)


class ConceptImageSidecar(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    class_id: int = Field(alias="class")
    neurons: List[int]
    space: str
    config: Dict[str, Any]
    final_criterion: float
    best_iteration: int


class ManifestFile(BaseModel):
    path: str
    sha256: str


class ArtifactManifest(BaseModel):
    stage: str
    format_version: int
    files: List[ManifestFile]
    config: Dict[str, Any]
    summary: Dict[str, Any] = Field(default_factory=dict)


NOT_COMPUTED = "not computed: requires generative model"


class _Report(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]):
        return cls.model_validate(payload)


class ValiditySampleRecord(BaseModel):
    index: int
    class_id: int = Field(alias="class")
    predicted: int
    top1: bool
    topk: bool
    r_conf: Optional[float]
    cos: float

    model_config = ConfigDict(populate_by_name=True)


class ValidityReport(_Report):
    space: str
    n: int
    topk: int
    acc1: float
    acck: float
    r_conf: float
    r_conf_excluded: int
    cos: float
    acc1_ci: List[float] = Field(default_factory=list)
    clipscore_concept: Optional[float] = None
    lpips: str = NOT_COMPUTED
    fs: str = NOT_COMPUTED
    header: str = ""
    records: List[ValiditySampleRecord] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)


class MethodScores(BaseModel):
    causal_hit: float
    causal_hit_ci: List[float]
    distractor_hit: float
    distractor_hit_ci: List[float]
    causal_topk_hit: float
    causal_topk_hit_ci: List[float]
    distractor_topk_hit: float
    mean_causal_rank: Optional[float]
    clipscore_original: float
    clipscore_concept: Optional[float] = None


class BenchmarkImageRecord(BaseModel):
    index: int
    method: str
    class_id: int = Field(alias="class")
    seed: int
    top: List[str]
    causal_rank: Optional[int]

    model_config = ConfigDict(populate_by_name=True)


class FaithfulnessReport(_Report):
    n_images: int
    k_con: int
    bank_size: float
    seed: int
    resamples: int
    methods: Dict[str, MethodScores]
    random_expected_topk: float
    lpips: str = NOT_COMPUTED
    fs: str = NOT_COMPUTED
    records: List[BenchmarkImageRecord] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
