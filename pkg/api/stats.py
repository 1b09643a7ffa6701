"""
Run Counter

Persists the number of experiments run through the API as JSON under the
configured data directory.
"""

import json
import logging
from pathlib import Path

from src.config import get_settings

logger = logging.getLogger(__name__)


class StatsService:
    """Service to handle global stats persistence."""

    @staticmethod
    def _stats_file() -> Path:
        """Ensure the data directory and stats file exist."""
        data_dir = get_settings().data_dir
        data_dir.mkdir(parents=True, exist_ok=True)
        path = data_dir / "stats.json"
        if not path.exists():
            path.write_text(json.dumps({"total_runs": 0}))
        return path

    @classmethod
    def get_count(cls) -> int:
        """Get the current run count."""
        try:
            with open(cls._stats_file()) as f:
                return int(json.load(f).get("total_runs", 0))
        except (OSError, ValueError) as exc:
            logger.warning("could not read run stats: %s", exc)
            return 0

    @classmethod
    def increment_count(cls) -> int:
        """Increment the run count by 1."""
        count = cls.get_count() + 1
        try:
            with open(cls._stats_file(), "w") as f:
                json.dump({"total_runs": count}, f)
        except OSError as exc:
            logger.warning("could not persist run stats: %s", exc)
        return count
