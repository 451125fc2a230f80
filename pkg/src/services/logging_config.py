"""
Structured logging configuration for polyrelax runs.
Provides JSON formatted logs for batch / CI use.
"""
import logging
import json
import sys
from datetime import datetime, timezone
from src.config import settings

# context fields copied from LogRecord attributes into JSON output
CONTEXT_FIELDS = ("run_id", "command", "epsilon", "step", "t", "n_cells", "duration_ms")


class JSONFormatter(logging.Formatter):
    """Custom formatter that outputs logs as JSON."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for field in CONTEXT_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, ensure_ascii=False, default=str)


class ContextAdapter(logging.LoggerAdapter):
    """Logger adapter that adds run context to log messages."""

    def process(self, msg, kwargs):
        extra = kwargs.get("extra", {})
        extra.update(self.extra)
        kwargs["extra"] = extra
        return msg, kwargs


def setup_logging(json_format: bool | None = None, level: str | None = None):
    """
    Configure logging for the application.

    Args:
        json_format: If True, emit one JSON object per line. Defaults to settings.LOG_JSON.
        level: Overrides settings.LOG_LEVEL.
    """
    if json_format is None:
        json_format = settings.LOG_JSON
    level = level or settings.LOG_LEVEL

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # diagnostics go to stderr; stdout carries certificates
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)

    if json_format:
        console_handler.setFormatter(JSONFormatter())
    else:
        console_handler.setFormatter(logging.Formatter(
            "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        ))

    root_logger.addHandler(console_handler)

    # Reduce noise from third-party libraries
    logging.getLogger("asyncio").setLevel(logging.WARNING)

    return root_logger


def get_logger(name: str, **extra) -> logging.LoggerAdapter:
    """
    Get a logger with optional run context.

    Example:
        logger = get_logger(__name__, run_id="3f2a9c", epsilon=0.05)
        logger.info("Starting relaxation run")
    """
    logger = logging.getLogger(name)
    return ContextAdapter(logger, extra)
