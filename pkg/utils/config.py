"""
Runtime settings loaded from the environment (and an optional .env file).
"""

import os
from typing import Any, Dict

from dotenv import load_dotenv

from utils.constants import DEFAULT_THRESHOLD
from utils.errors import ConfigError

# Load environment variables
load_dotenv()


def _int_env(name: str, default: int, minimum: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


class Settings:
    """Ledger, consensus and simulator defaults, overridable per scenario."""

    def __init__(self):
        self.threshold = _int_env('BBC_THRESHOLD', DEFAULT_THRESHOLD, 0)
        self.timeout_ticks = _int_env('BBC_TIMEOUT_TICKS', 50, 1)
        self.max_ticks = _int_env('BBC_MAX_TICKS', 200_000, 1)
        self.base_delay = _int_env('BBC_BASE_DELAY', 1, 0)
        self.jitter = _int_env('BBC_JITTER', 0, 0)
        self.log_level = os.getenv('BBC_LOG_LEVEL', 'WARNING').upper()
        self.log_format = os.getenv('BBC_LOG_FORMAT', 'text').lower()
        if self.log_format not in ('text', 'json'):
            raise ConfigError(f"BBC_LOG_FORMAT must be 'text' or 'json', got {self.log_format!r}")

    def as_dict(self) -> Dict[str, Any]:
        return dict(vars(self))


# Global instance
settings = Settings()
