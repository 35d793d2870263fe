import os
import io
import hashlib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Tuple, Union

import orjson

PathLike = Union[str, Path]

__APP_DIRS_PATHS = {}
_JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
_JSONL_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


@lru_cache(maxsize=1)
def get_root_path(start=__file__, APP_HEAD="texter.py"):
    """
    Walks up the directory tree from ``start`` until it finds the marker file.
    Returns the directory containing the marker, or the grandparent of ``start`` if not found.
    """
    root_dir = os.getenv("APP_ROOT", None)
    if root_dir is not None and os.path.exists(root_dir):
        return root_dir
    current_dir = os.path.abspath(os.path.dirname(start))
    filesystem_root = os.path.abspath(os.sep)
    while True:
        if os.path.exists(os.path.join(current_dir, APP_HEAD)):
            return current_dir
        if current_dir == filesystem_root:
            return os.path.dirname(os.path.dirname(os.path.abspath(start)))
        current_dir = os.path.dirname(current_dir)
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def set_paths(APP_PATHS: Dict[str, Any]):
    __APP_DIRS_PATHS.update(APP_PATHS)
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def get_paths() -> Dict[str, Any]:
    return __APP_DIRS_PATHS
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def create_logfile(log_name: str) -> str:
    log_path = __APP_DIRS_PATHS.get("LOGS_ROOT_PATH") or os.getenv("LOGS_ROOT_PATH", None)
    if log_path is None:
        raise ValueError("LOGS_ROOT_PATH is not set in 'APP_DIRS_PATHS' or in 'env' variables.")
    logs_dir = os.path.join(log_path, "logs")
    os.makedirs(logs_dir, exist_ok=True)
    file_path = os.path.join(logs_dir, f"{log_name}.log")
    if os.path.exists(file_path):
        os.remove(file_path)
    return file_path
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def write_json(write_data, file_path: PathLike):
    """
    Writes data to a JSON file with sorted keys so identical data gives identical bytes.

    Args:
        write_data: The data to serialize and save.
        file_path: Path to the file where data will be written.
    """
    ensure_dir(Path(file_path).parent)
    with io.BufferedWriter(open(file_path, "wb")) as json_f:
        json_f.write(orjson.dumps(write_data, option=_JSON_OPTIONS))
        json_f.write(b"\n")
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def read_json(file_path: PathLike) -> Dict:
    """
    Reads and deserializes data from a JSON file.

    Raises:
        FileNotFoundError: when the file does not exist.
        orjson.JSONDecodeError: when the content is not valid JSON.
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"JSON file not found: {file_path}")
    with io.BufferedReader(open(file_path, "rb")) as json_f:
        read_data = json_f.read()
    return orjson.loads(read_data) if read_data.strip() else {}
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def write_jsonl(records: Iterable[Any], file_path: PathLike):
    ensure_dir(Path(file_path).parent)
    with io.BufferedWriter(open(file_path, "wb")) as jsonl_f:
        for record in records:
            jsonl_f.write(orjson.dumps(record, option=_JSONL_OPTIONS))
            jsonl_f.write(b"\n")
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def iter_jsonl_lines(file_path: PathLike) -> Iterator[Tuple[int, str]]:
    """Yield ``(line_number, raw_line)`` for every non-blank line, numbering from 1."""
    with open(file_path, "r", encoding="utf-8") as jsonl_f:
        for line_number, line in enumerate(jsonl_f, start=1):
            if line.strip():
                yield line_number, line
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def read_jsonl(file_path: PathLike) -> List[Any]:
    return [orjson.loads(line) for _, line in iter_jsonl_lines(file_path)]
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def sha256_file(file_path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(file_path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
