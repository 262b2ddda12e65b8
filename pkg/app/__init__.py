"""
Stealthy sustainability-targeting attack synthesis for linear cyber-physical systems
"""

from app.core.config import settings

__version__ = "1.0.0"
