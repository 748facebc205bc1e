"""Logging utilities for the augmentation engine."""

import json
import logging
from logging import Logger
from typing import Optional

# Attributes every LogRecord carries; anything else arrived through ``extra=``.
_RESERVED = frozenset(
    vars(logging.LogRecord("", 0, "", 0, "", None, None)).keys()
) | {"message", "asctime"}


def _extras(record: logging.LogRecord) -> dict:
    return {key: value for key, value in vars(record).items() if key not in _RESERVED}


class ContextFormatter(logging.Formatter):
    """Text formatter that appends ``extra`` fields as ``key=value`` pairs."""

    def format(self, record: logging.LogRecord) -> str:
        base = super().format(record)
        extras = _extras(record)
        if not extras:
            return base
        context = " ".join(f"{key}={value}" for key, value in sorted(extras.items()))
        return f"{base} | {context}"


class JsonFormatter(logging.Formatter):
    """One JSON object per line, extras merged at the top level."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        payload.update(_extras(record))
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def configure_logging(level: str = "INFO", fmt: str = "text") -> Logger:
    """Configure root logger and return it.

    Args:
        level: Logging level name.
        fmt: ``text`` or ``json``.
    """

    logger = logging.getLogger()
    if not logger.handlers:
        logger.addHandler(logging.StreamHandler())

    for handler in logger.handlers:
        if fmt == "json":
            handler.setFormatter(JsonFormatter())
        else:
            handler.setFormatter(
                ContextFormatter("%(asctime)s | %(levelname)s | %(name)s | %(message)s")
            )

    logger.setLevel(level.upper())
    return logger


def get_logger(name: Optional[str] = None) -> Logger:
    """Return a module-specific logger."""

    return logging.getLogger(name)
