"""Logging for the toolkit: one JSON object per record on stderr, tagged with a run id.

A run id scopes one CLI invocation or one harness batch. Structured fields go
through ``extra=`` and land in the JSON payload; numpy scalars and arrays are
converted to plain Python values first.
"""

from __future__ import annotations

import json
import logging
import logging.config
from contextlib import contextmanager
from contextvars import ContextVar, Token
from datetime import datetime, timezone
from typing import Any, Final, Iterator

import numpy as np

from settings import settings

LOGGER_NAME: Final = "ibpre"
FORMATS: Final = ("json", "plain")

_RUN_ID: Final[ContextVar[str]] = ContextVar("run_id", default="-")
# Everything a bare LogRecord carries, so only caller-supplied extras are copied.
_RECORD_FIELDS: Final[frozenset[str]] = frozenset(
    vars(logging.LogRecord("", logging.INFO, "", 0, "", None, None))
) | {"message", "asctime", "run_id"}


def get_run_id() -> str:
    return _RUN_ID.get() or "-"


def bind_run_id(run_id: str) -> Token[str]:
    """Tag every following record in this context with ``run_id``."""

    return _RUN_ID.set(run_id)


def reset_run_id(token: Token[str]) -> None:
    _RUN_ID.reset(token)


@contextmanager
def run_scope(run_id: str) -> Iterator[str]:
    """Bind ``run_id`` for the duration of the block."""

    token = bind_run_id(run_id)
    try:
        yield run_id
    finally:
        reset_run_id(token)


class RunIdFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:  # noqa: D401 - standard filter signature
        record.run_id = get_run_id()
        return True


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    return str(value)


class JsonFormatter(logging.Formatter):
    """Render a record as a single JSON line."""

    def format(self, record: logging.LogRecord) -> str:  # noqa: D401 - interface defined by logging
        stamp = datetime.fromtimestamp(record.created, timezone.utc)
        payload: dict[str, Any] = {
            "timestamp": stamp.isoformat(timespec="milliseconds"),
            "level": record.levelname,
            "logger": record.name,
            "module": record.module,
            "line": record.lineno,
            "message": record.getMessage(),
            "run_id": getattr(record, "run_id", "-"),
        }
        payload.update(
            (key, value)
            for key, value in vars(record).items()
            if key not in _RECORD_FIELDS and not key.startswith("_") and value is not None
        )
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        if record.stack_info:
            payload["stack"] = self.formatStack(record.stack_info)
        return json.dumps(payload, ensure_ascii=False, default=_jsonable)


def build_logging_config(log_level: str | None = None, log_format: str | None = None) -> dict[str, Any]:
    """dictConfig for the toolkit; arguments override IBPRE_LOG_LEVEL / IBPRE_LOG_FORMAT."""

    level = (log_level or settings.LOG_LEVEL).upper()
    chosen = (log_format or settings.LOG_FORMAT).lower()
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "filters": {"run_id": {"()": "logging_config.RunIdFilter"}},
        "formatters": {
            "json": {"()": "logging_config.JsonFormatter"},
            "plain": {"format": "%(asctime)s %(levelname)s %(name)s [%(run_id)s] %(message)s"},
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "stream": "ext://sys.stderr",
                "filters": ["run_id"],
                "formatter": chosen if chosen in FORMATS else "json",
            },
        },
        "root": {"level": "WARNING", "handlers": ["console"]},
        "loggers": {
            LOGGER_NAME: {"level": level, "propagate": True},
            "py.warnings": {"level": "WARNING", "propagate": True},
        },
    }


def setup_logging(log_level: str | None = None) -> logging.Logger:
    logging.captureWarnings(True)
    logging.config.dictConfig(build_logging_config(log_level))
    return logging.getLogger(LOGGER_NAME)


__all__ = [
    "JsonFormatter",
    "RunIdFilter",
    "bind_run_id",
    "build_logging_config",
    "get_run_id",
    "reset_run_id",
    "run_scope",
    "setup_logging",
]
