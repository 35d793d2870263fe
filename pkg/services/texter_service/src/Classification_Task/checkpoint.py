#!/usr/bin/env python3.10
"""
Checkpoint container.

    b"TXCK" | uint32 format version | uint64 header length | JSON header | blobs

All integers and blobs are little-endian. The header lists, per tensor, its
name, shape, dtype, byte offset (relative to the first blob) and byte length,
plus the architecture descriptor and training metadata. Blobs are written in
the tensor's own dtype so loading reproduces every value bit for bit.
"""

import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import orjson
import torch
from torch import nn

from common_utilities import ensure_dir

from ..errors import ArtifactIOError

MAGIC = b"TXCK"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPES: Dict[str, Tuple[torch.dtype, str]] = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"),
}
_NAMES = {torch_dtype: name for name, (torch_dtype, _) in _DTYPES.items()}


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, torch.Tensor],
                    architecture: Dict[str, Any], metadata: Dict[str, Any] = None) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        tensor = tensors[name].detach().cpu().contiguous()
        dtype_name = _NAMES.get(tensor.dtype)
        if dtype_name is None:
            raise ArtifactIOError(f"Cannot store tensor '{name}' of dtype {tensor.dtype}")
        blob = tensor.numpy().astype(_DTYPES[dtype_name][1], copy=False).tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "dtype": dtype_name,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = orjson.dumps(
        {"architecture": architecture, "metadata": metadata or {}, "tensors": entries},
        option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY,
    )
    with open(path, "wb") as handle:
        handle.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)))
        handle.write(header)
        for blob in blobs:
            handle.write(blob)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor], Dict[str, Any]]:
    """Returns ``(architecture, tensors, metadata)``."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"Cannot read checkpoint {path}: {exc}") from exc
    if len(payload) < _PREAMBLE.size:
        raise ArtifactIOError(f"Checkpoint {path} is truncated")
    magic, version, header_length = _PREAMBLE.unpack_from(payload)
    if magic != MAGIC:
        raise ArtifactIOError(f"{path} is not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ArtifactIOError(f"Unsupported checkpoint version {version} in {path}")
    start = _PREAMBLE.size
    try:
        header = orjson.loads(payload[start:start + header_length])
    except orjson.JSONDecodeError as exc:
        raise ArtifactIOError(f"Corrupt checkpoint header in {path}: {exc}") from exc
    blob_start = start + header_length
    tensors = {}
    for entry in header["tensors"]:
        torch_dtype, numpy_dtype = _DTYPES[entry["dtype"]]
        begin = blob_start + entry["offset"]
        raw = payload[begin:begin + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ArtifactIOError(f"Checkpoint {path} is truncated in tensor '{entry['name']}'")
        array = np.frombuffer(raw, dtype=numpy_dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(array).to(torch_dtype)
    return header["architecture"], tensors, header["metadata"]


def save_module(path: Union[str, Path], module: nn.Module, architecture: Dict[str, Any],
                metadata: Dict[str, Any] = None) -> Path:
    return save_checkpoint(path, dict(module.state_dict()), architecture, metadata)


def load_state(module: nn.Module, tensors: Dict[str, torch.Tensor]) -> nn.Module:
    missing, unexpected = module.load_state_dict(tensors, strict=False)
    if missing or unexpected:
        raise ArtifactIOError(f"Checkpoint does not match module: missing={missing} unexpected={unexpected}")
    return module
