#!/usr/bin/env python3.10
"""Artefact layout of one run directory and the per-stage manifests."""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from common_utilities import LOGGER, LOG_LEVEL, ensure_dir, read_json, sha256_file, write_json

from .Datatypes import Stage
from .request_models import ArtifactManifest, ManifestFile

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT_VERSION = 1

CLASSIFIER_FILE = "classifier.txck"
MULTILABEL_CLASSIFIER_FILE = "classifier_multilabel.txck"
EMBEDDER_FILE = "embedder.txck"
SAE_FILE = "sae.txck"
ALIGNER_FILE = "aligner.txck"
SCENE_FILE = "scene.json"

# Checkpoint file -> the stage that produces it.
PRODUCERS: Dict[str, Stage] = {
    CLASSIFIER_FILE: Stage.TRAIN_CLASSIFIER,
    MULTILABEL_CLASSIFIER_FILE: Stage.TRAIN_CLASSIFIER,
    EMBEDDER_FILE: Stage.TRAIN_EMBEDDER,
    SAE_FILE: Stage.TRAIN_SAE,
    ALIGNER_FILE: Stage.TRAIN_ALIGNER,
}


def stage_dir(out_dir: Union[str, Path], stage: Stage) -> Path:
    return ensure_dir(Path(out_dir) / stage.value)


def require_artifact(stage: Union[str, Stage], path: Union[str, Path]) -> Path:
    """Return ``path`` or raise MissingArtifactError naming the stage that produces it."""
    from src.errors import MissingArtifactError

    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(Stage(stage).value if isinstance(stage, str) else stage.value, str(path))
    return path


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(path, base)).as_posix()
    except ValueError:
        return path.as_posix()


def write_manifest(out_dir: Union[str, Path], stage: Stage, files: Iterable[Union[str, Path]],
                   config: Dict[str, Any], summary: Optional[Dict[str, Any]] = None,
                   logger: Optional[LOGGER] = None) -> Path:
    """Write ``<out>/<stage>/manifest.json`` listing ``files`` (relative to ``out``) with SHA-256 digests."""
    out_dir = Path(out_dir)
    entries = [
        ManifestFile(path=_relative(Path(path), out_dir), sha256=sha256_file(path))
        for path in sorted(set(Path(p) for p in files))
    ]
    manifest = ArtifactManifest(
        stage=stage.value, format_version=MANIFEST_FORMAT_VERSION,
        files=entries, config=config, summary=summary or {},
    )
    manifest_path = stage_dir(out_dir, stage) / MANIFEST_NAME
    write_json(manifest.model_dump(), manifest_path)
    if logger is not None:
        logger.write_logs(f"[{stage.value}] manifest with {len(entries)} file(s) -> {manifest_path}", LOG_LEVEL.DEBUG)
    return manifest_path


def read_manifest(out_dir: Union[str, Path], stage: Stage) -> ArtifactManifest:
    path = require_artifact(stage, Path(out_dir) / stage.value / MANIFEST_NAME)
    return ArtifactManifest.model_validate(read_json(path))
