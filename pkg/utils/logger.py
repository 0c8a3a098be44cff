import logging
import sys
from typing import Optional, TextIO

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def build_formatter(log_format: str = "text") -> logging.Formatter:
    """Return the formatter for 'text' or 'json' output"""
    if log_format == "json":
        return jsonlogger.JsonFormatter(JSON_FORMAT, datefmt='%Y-%m-%dT%H:%M:%S')
    return logging.Formatter(TEXT_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')


def setup_logging(
        level=logging.INFO,
        log_format: str = "text",
        stream: Optional[TextIO] = None
):
    """Setup application logging"""

    formatter = build_formatter(log_format)

    # Console handler
    console_handler = logging.StreamHandler(stream or sys.stdout)
    console_handler.setFormatter(formatter)

    # Root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    # Prevent multiple handlers if reloaded
    if not any(isinstance(h, logging.StreamHandler) for h in root_logger.handlers):
        root_logger.addHandler(console_handler)
    else:
        # Update formatter on existing handlers
        for h in root_logger.handlers:
            if isinstance(h, logging.StreamHandler):
                h.setFormatter(formatter)

    # Reduce noise from libraries
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)
