from .files_handler import (
    get_root_path,
    set_paths,
    get_paths,
    create_logfile,
    ensure_dir,
    write_json,
    read_json,
    write_jsonl,
    read_jsonl,
    iter_jsonl_lines,
    sha256_file,
)
from .logger import LOGGER, LOG_LEVEL, resolve_logger
from .config_manager import ConfigManager, ConfigError, REFERENCE_DEFAULTS, config_help, reset_config_cache
from .image_preprocessing import crop_image_box, resize_bilinear, to_uint8, write_ppm, read_ppm

__all__ = [
    "get_root_path",
    "set_paths",
    "get_paths",
    "create_logfile",
    "ensure_dir",
    "write_json",
    "read_json",
    "write_jsonl",
    "read_jsonl",
    "iter_jsonl_lines",
    "sha256_file",
    "LOGGER",
    "LOG_LEVEL",
    "resolve_logger",
    "ConfigManager",
    "ConfigError",
    "REFERENCE_DEFAULTS",
    "config_help",
    "reset_config_cache",
    "crop_image_box",
    "resize_bilinear",
    "to_uint8",
    "write_ppm",
    "read_ppm",
]
