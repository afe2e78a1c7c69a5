"""Small shared helpers: retry decorator, timestamps, filesystem-safe names."""

from __future__ import annotations

import functools
import logging
import re
import time
from datetime import datetime, timezone
from typing import Callable

_UNSAFE_CHARS = re.compile(r"[^A-Za-z0-9._\-\[\]#+]+")


def retry(max_attempts: int = 3, delay: float = 1.0, exceptions: tuple[type[BaseException], ...] = (Exception,)):
    """Decorator that retries a function if it raises one of ``exceptions``."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = logging.getLogger(func.__module__)
            attempts = 0
            while True:
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    attempts += 1
                    if attempts >= max_attempts:
                        logger.error(f"{func.__name__} failed after {max_attempts} attempts")
                        raise
                    logger.warning(f"{func.__name__} attempt {attempts} failed: {e}. Retrying...")
                    time.sleep(delay)

        return wrapper

    return decorator


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def utc_timestamp(clock: Callable[[], datetime] | None = None) -> str:
    moment = (clock or utc_now)()
    return moment.strftime("%Y%m%dT%H%M%S%fZ")


def sanitize_filename(name: str) -> str:
    cleaned = _UNSAFE_CHARS.sub("_", name).strip("._")
    return cleaned or "unnamed"
