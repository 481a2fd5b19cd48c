"""
Logging configuration for the simulator.
"""
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

import structlog


def setup_logging(env: str = "dev", log_level: Optional[str] = None, log_format: Optional[str] = None):
    """
    Setup simulator logging with environment-specific configuration.

    structlog loggers are routed through the stdlib root logger so that every
    module's events share one set of handlers.

    Args:
        env: Runtime environment ('dev' or 'prod')
        log_level: Override log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: 'console' or 'json'; defaults to json in prod, console otherwise
    """
    # Determine log level
    if log_level:
        level = getattr(logging, log_level.upper(), logging.INFO)
    elif env == "prod":
        level = logging.INFO
    else:
        level = logging.DEBUG

    if log_format is None:
        log_format = "json" if env == "prod" else "console"

    shared_processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
    ]

    if log_format == "json":
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared_processors,
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            renderer,
        ],
    )

    structlog.configure(
        processors=shared_processors
        + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    # Replace handlers left by earlier calls
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    # stderr only; stdout carries the rendered tables
    stderr_handler = logging.StreamHandler(sys.stderr)
    stderr_handler.setLevel(level)
    stderr_handler.setFormatter(formatter)
    root_logger.addHandler(stderr_handler)

    if env == "prod":
        run_log = _run_log_handler(os.getenv("LOG_DIR", "logs"), formatter)
        if run_log is not None:
            root_logger.addHandler(run_log)

    structlog.get_logger(__name__).info(
        "logging_configured", env=env, level=logging.getLevelName(level), format=log_format
    )


def _run_log_handler(log_dir: str, formatter: logging.Formatter) -> Optional[logging.Handler]:
    """Rotating fedce.log under `log_dir`, or None when the directory is not writable."""
    try:
        os.makedirs(log_dir, exist_ok=True)
        handler = RotatingFileHandler(
            filename=os.path.join(log_dir, "fedce.log"),
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
        )
    except OSError as e:
        logging.getLogger(__name__).warning("run log disabled (%s): %s", log_dir, e)
        return None
    handler.setLevel(logging.INFO)
    handler.setFormatter(formatter)
    return handler
