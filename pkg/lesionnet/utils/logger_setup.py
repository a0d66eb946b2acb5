"""File + console logging for training runs.

A run logs to ``<run dir>/logs/train.log``.  When that directory cannot be
written, the log goes to ``<tmp>/lesionnet_logs/`` instead and, failing that,
to the console only.
"""

import os
import logging
import tempfile
from pathlib import Path
from typing import Iterator, Optional
from logging.handlers import RotatingFileHandler

FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
MAX_BYTES = 2_000_000
BACKUPS = 5
FALLBACK_DIR = "lesionnet_logs"


def _candidates(log_file) -> Iterator[Path]:
    path = Path(log_file)
    if path.parent == Path("."):
        path = Path("logs") / path
    yield path
    yield Path(tempfile.gettempdir()) / FALLBACK_DIR / path.name


def _open_file_handler(log_file, logger: logging.Logger) -> Optional[RotatingFileHandler]:
    requested = None
    for path in _candidates(log_file):
        requested = requested or path
        try:
            os.makedirs(path.parent, exist_ok=True)
            handler = RotatingFileHandler(path, maxBytes=MAX_BYTES, backupCount=BACKUPS, encoding="utf-8")
        except OSError:
            continue
        if path != requested:
            logger.warning("Log path %s not writable, using %s instead", requested, path)
        return handler
    return None


def setup_logger(name: str, log_file, level: int = logging.INFO) -> logging.Logger:
    """Attach a rotating file handler and a console handler to ``name``.

    A bare file name is placed under ``./logs``.  A logger that already has
    handlers is returned as is.
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    logger.setLevel(level)
    fmt = logging.Formatter(FORMAT)

    handlers = [_open_file_handler(log_file, logger), logging.StreamHandler()]
    for handler in handlers:
        if handler is None:
            continue
        handler.setFormatter(fmt)
        logger.addHandler(handler)
    return logger


def log_file_of(name: str) -> Optional[Path]:
    "Where ``name`` currently writes, or None when it logs to the console only."
    for handler in logging.getLogger(name).handlers:
        if isinstance(handler, RotatingFileHandler):
            return Path(handler.baseFilename)
    return None


def close_logger(name: str) -> None:
    """Detach and close every handler of ``name`` (end of a run)."""
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def reset_log(log_file) -> None:
    """Delete ``log_file`` and its rotated backups so the next run starts a fresh log."""
    path = Path(log_file)
    for candidate in [path] + [path.with_name(f"{path.name}.{i}") for i in range(1, BACKUPS + 1)]:
        try:
            candidate.unlink()
        except FileNotFoundError:
            pass
