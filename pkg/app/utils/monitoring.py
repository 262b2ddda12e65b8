import time
import logging
from functools import wraps
from typing import Callable

from app.utils.exceptions import AttackSynthesisError

logger = logging.getLogger(__name__)


def _scenario_label(args) -> str:
    name = getattr(args[0], "name", None) if args else None
    return f"[{name}] " if isinstance(name, str) else ""


def monitor_performance(func: Callable) -> Callable:
    """Log wall time of a pipeline stage, and the exit code it maps to when it fails"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        label = _scenario_label(args)
        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except AttackSynthesisError as e:
            elapsed = time.perf_counter() - start_time
            logger.error(f"{label}{func.__name__} failed after {elapsed:.2f}s (exit code {e.exit_code}): {e}")
            raise
        except Exception as e:
            elapsed = time.perf_counter() - start_time
            logger.exception(f"{label}{func.__name__} crashed after {elapsed:.2f}s: {e}")
            raise
        logger.info(f"{label}{func.__name__} finished in {time.perf_counter() - start_time:.2f}s")
        return result
    return wrapper
