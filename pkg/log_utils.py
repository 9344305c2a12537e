"""
Logging helpers: structlog configuration plus the console banner used by the CLI
"""

import logging
import sys
from typing import Optional

import structlog

import settings


class Colors:
    """ANSI color codes for terminal output"""
    RED = '\033[91m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    BLUE = '\033[94m'
    MAGENTA = '\033[95m'
    CYAN = '\033[96m'
    BOLD = '\033[1m'
    END = '\033[0m'


_CONFIGURED = False


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Configure structlog once; later calls only change the level/format."""
    global _CONFIGURED
    level_name = (level or settings.LOG_LEVEL).upper()
    numeric_level = getattr(logging, level_name, logging.INFO)
    renderer = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if (fmt or settings.LOG_FORMAT) == "json"
        else structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    _CONFIGURED = True


def get_logger(name: str) -> structlog.typing.FilteringBoundLogger:
    """Module logger bound to its name"""
    if not _CONFIGURED:
        configure_logging()
    return structlog.get_logger(name).bind(module=name)


def print_banner(title: str) -> None:
    """Header printed by the CLI before a run"""
    line = '=' * 60
    print(f"{Colors.CYAN}{line}{Colors.END}", file=sys.stderr)
    print(f"{Colors.BOLD}{title}{Colors.END}", file=sys.stderr)
    print(f"{Colors.CYAN}{line}{Colors.END}", file=sys.stderr)
