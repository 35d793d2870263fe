#!/usr/bin/env python3.10

import os
import logging
from enum import Enum
from typing import Dict, List, Literal, Optional, Union

from .files_handler import create_logfile

LevelName = Literal["DEBUG", "INFO", "ERROR", "CRITICAL", "WARNING"]
ALL_LEVELS: List[LevelName] = ["DEBUG", "INFO", "ERROR", "CRITICAL", "WARNING"]
CONSOLE_LEVELS: List[LevelName] = ["INFO", "ERROR", "WARNING"]


class LOG_LEVEL(Enum):
    DEBUG = 0
    INFO = 1
    ERROR = 2
    CRITICAL = 3
    WARNING = 4

    @property
    def stdlib_level(self) -> int:
        return getattr(logging, self.name)


class Stream__ColoredFormatter(logging.Formatter):
    RESET = "\033[0m"
    COLORS: Dict[int, str] = {
        logging.DEBUG: "\033[36m",
        logging.INFO: "\033[32m",
        logging.WARNING: "\033[33m",
        logging.ERROR: "\033[31m",
        logging.CRITICAL: "\033[35m",
    }

    def format(self, record):
        # Work on a copy so the file handler never sees escape codes
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f"{self.COLORS.get(record.levelno, '')}{record.levelname}{self.RESET}"
        return super().format(record)


class loggingFilter(logging.Filter):
    """Pass only records whose level is in an explicit allow-list (not a threshold)."""

    def __init__(self, logging_level: Union[List[str], str]):
        super().__init__()
        names = [logging_level] if isinstance(logging_level, str) else list(logging_level)
        unknown = [name for name in names if name not in ALL_LEVELS]
        if unknown:
            raise ValueError(f"Invalid logging level(s) {unknown}. Valid levels are: {', '.join(ALL_LEVELS)}")
        self.allowed = {getattr(logging, name) for name in names}

    def filter(self, record):
        return record.levelno in self.allowed


class LOGGER:
    """Named logger with level-filtered stream/file handlers.

    ``LOGGER(None)`` is a silent logger: every ``write_logs`` call is a no-op,
    which is what library code gets when the caller does not care about logs.
    """

    _FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    def __init__(self, logger_name: Optional[str]):
        if logger_name is not None:
            self.__logger = logging.Logger(logger_name)
            self.__logger.setLevel(logging.DEBUG)
        else:
            self.__logger = None

    @property
    def name(self) -> Optional[str]:
        return self.__logger.name if self.__logger else None

    def _ensure_file_handlers(self):
        if not self.__logger:
            return
        for handler in self.__logger.handlers:
            if not isinstance(handler, logging.FileHandler):
                continue
            base_filename = getattr(handler, "baseFilename", None)
            if not base_filename:
                continue
            stream = getattr(handler, "stream", None)
            if os.path.exists(base_filename) and stream is not None and not stream.closed:
                continue
            handler.acquire()
            try:
                handler.close()
                handler.stream = handler._open()
            finally:
                handler.release()

    def create_File_logger(self, logs_name: str, log_levels: List[LevelName]):
        if not self.__logger:
            return
        try:
            file_path = create_logfile(logs_name)
            file_logger = logging.FileHandler(file_path, mode="a")
            file_logger.setFormatter(logging.Formatter(self._FORMAT))
            file_logger.addFilter(loggingFilter(log_levels))
            self.__logger.addHandler(file_logger)
            # Open now so permission errors surface at creation time
            self._ensure_file_handlers()
        except ValueError as e:
            raise ValueError(f"Failed to create log file: {e}")
        except OSError as e:
            raise OSError(f"An error occurred while creating the file logger: {e}")

    def create_Stream_logger(self, log_levels: List[LevelName]):
        if not self.__logger:
            return
        stream_logger = logging.StreamHandler()
        stream_logger.setFormatter(Stream__ColoredFormatter(self._FORMAT))
        stream_logger.addFilter(loggingFilter(log_levels))
        self.__logger.addHandler(stream_logger)

    def close(self):
        if not self.__logger:
            return
        for handler in list(self.__logger.handlers):
            handler.close()
            self.__logger.removeHandler(handler)

    def write_logs(self, logs_message, logs_level: LOG_LEVEL):
        if not self.__logger:
            return
        try:
            self._ensure_file_handlers()
        except OSError:
            pass
        if not isinstance(logs_level, LOG_LEVEL):
            raise ValueError(f"Unknown log level: {logs_level}")
        self.__logger.log(logs_level.stdlib_level, logs_message)


def resolve_logger(logger: Union["LOGGER", str, None]) -> LOGGER:
    """Accept a ready LOGGER, a name to build one from, or None for silence."""
    if isinstance(logger, LOGGER):
        return logger
    if isinstance(logger, str):
        named = LOGGER(logger)
        named.create_File_logger(f"{logger}", log_levels=ALL_LEVELS)
        named.create_Stream_logger(log_levels=CONSOLE_LEVELS)
        return named
    return LOGGER(None)
