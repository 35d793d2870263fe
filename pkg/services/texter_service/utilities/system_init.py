#!/usr/bin/env python3.10
import os
from pathlib import Path
from typing import Dict, Optional, Tuple

import torch

from common_utilities import ConfigManager, LOGGER, LOG_LEVEL, ensure_dir, get_root_path, set_paths


def initialize_system_paths(service_file_path: str, out_dir: Path) -> Dict[str, str]:
    root_path = get_root_path(service_file_path, "texter.py")

    __APP_DIRS_PATHS__ = dict()
    __APP_DIRS_PATHS__["APPLICATION_ROOT_PATH"] = root_path
    __APP_DIRS_PATHS__["RUN_ROOT_PATH"] = str(out_dir)
    __APP_DIRS_PATHS__["LOGS_ROOT_PATH"] = str(out_dir)
    set_paths(__APP_DIRS_PATHS__)
    return __APP_DIRS_PATHS__


def configure_torch(threads: int) -> None:
    torch.set_num_threads(max(1, int(threads)))
    torch.use_deterministic_algorithms(True, warn_only=True)


def full_system_initialization(service_file_path: str, service_name: str, config_path: Optional[str] = None,
                               seed: Optional[int] = None, out_dir: Optional[str] = None,
                               threads: Optional[int] = None, stage: Optional[str] = None,
                               ) -> Tuple[Dict[str, str], LOGGER, ConfigManager]:
    """Resolve the run config, create the run directory and the service logger."""
    config_manager = ConfigManager.from_file(Path(config_path) if config_path else None)
    config_manager = config_manager.with_overrides(seed=seed, out_dir=out_dir, threads=threads)
    run_dir = ensure_dir(config_manager.paths.out)
    paths = initialize_system_paths(service_file_path, run_dir)

    service_logger = LOGGER(service_name)
    service_logger.create_Stream_logger(log_levels=["INFO", "ERROR", "WARNING"])
    service_logger.create_File_logger(
        f"{service_name}_{stage}_Logs" if stage else f"{service_name}_Logs",
        log_levels=["DEBUG", "INFO", "ERROR", "CRITICAL", "WARNING"],
    )
    configure_torch(config_manager.threads)

    service_logger.write_logs(f"Config loaded from {config_manager.source} (seed {config_manager.seed})", LOG_LEVEL.INFO)
    service_logger.write_logs(f"Run directory: {run_dir}", LOG_LEVEL.DEBUG)
    service_logger.write_logs(f"Application root path: {paths['APPLICATION_ROOT_PATH']} (pid {os.getpid()})", LOG_LEVEL.DEBUG)
    return paths, service_logger, config_manager
