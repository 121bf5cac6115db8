import logging
import sys

from src.config import settings

_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def configure_logging(level: str | None = None):
    """Configure logging for the application.

    Safe to call more than once: the stdout handler is only attached the first time.
    """
    root = logging.getLogger()
    if not any(getattr(h, "_bridgecraft", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._bridgecraft = True
        root.addHandler(handler)
    root.setLevel((level or settings.BRIDGECRAFT_LOG_LEVEL).upper())

# Make sure the function is available for import
__all__ = ['configure_logging']
