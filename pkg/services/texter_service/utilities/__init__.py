from .files_handler import (
    ALIGNER_FILE,
    CLASSIFIER_FILE,
    EMBEDDER_FILE,
    MULTILABEL_CLASSIFIER_FILE,
    SAE_FILE,
    SCENE_FILE,
    read_manifest,
    require_artifact,
    stage_dir,
    write_manifest,
)
from .system_init import configure_torch, full_system_initialization

__all__ = [
    "ALIGNER_FILE",
    "CLASSIFIER_FILE",
    "EMBEDDER_FILE",
    "MULTILABEL_CLASSIFIER_FILE",
    "SAE_FILE",
    "SCENE_FILE",
    "read_manifest",
    "require_artifact",
    "stage_dir",
    "write_manifest",
    "configure_torch",
    "full_system_initialization",
]
