import logging
import sys
import os

from app.core.config import settings


def setup_logging(level: str = None):
    """Setup application logging"""
    handlers = [logging.StreamHandler(sys.stderr)]

    if settings.LOG_TO_FILE:
        # Create logs directory if it doesn't exist
        os.makedirs(settings.LOG_DIR, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(settings.LOG_DIR, 'app.log')))

    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
