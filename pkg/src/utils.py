"""
Utility Functions

Seeding, replicate blocking, binomial intervals, ordered thread maps and
per-n checkpoints used across the library.
"""

import json
import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Replicates are generated in fixed-size blocks; block b always uses the same
# stream, so results do not depend on how blocks are scheduled.
BLOCK_SIZE = 64

# Stable stream tags, one per source of randomness
STREAM_TAGS: dict[str, int] = {
    "dgff": 1,
    "psi": 2,
    "ibrw": 3,
    "mibrw": 4,
    "tmibrw": 4,
    "coupled": 5,
    "bridge": 6,
    "pairs": 7,
    "walks": 8,
    "noise": 9,
    "dekking_host": 10,
}


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, *keys).

    Philox streams for distinct keys are independent, so a NoiseTree level or a
    replicate block can be regenerated without touching any other stream.

    Args:
        seed: Non-negative experiment seed
        keys: Non-negative stream keys (tag, level, block, ...)

    Returns:
        Fresh numpy Generator
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def derive_seed(seed: int, *keys: int) -> int:
    """Experiment seed for an independent sub-experiment keyed by (seed, *keys)."""
    return int(make_rng(seed, *keys).integers(0, 2**62))


def replicate_blocks(replicates: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """Split a replicate count into (block index, block size) pairs."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    full, rest = divmod(replicates, block_size)
    blocks = [(b, block_size) for b in range(full)]
    if rest:
        blocks.append((full, rest))
    return blocks


def thread_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """
    Map fn over items, in order, on at most `threads` workers.

    Results come back in input order so reductions stay deterministic.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def wilson_interval(count: int | np.ndarray, total: int, level: float = 0.95) -> tuple[Any, Any]:
    """
    Wilson score interval for a binomial proportion.

    Args:
        count: Number of successes (scalar or array)
        total: Number of trials
        level: Two-sided confidence level

    Returns:
        (lower, upper) bounds in [0, 1]
    """
    if total < 1:
        raise ValueError("total must be >= 1")
    z = stats.norm.ppf(0.5 + level / 2)
    p = np.asarray(count, dtype=float) / total
    denom = 1 + z**2 / total
    centre = (p + z**2 / (2 * total)) / denom
    half = z * np.sqrt(p * (1 - p) / total + z**2 / (4 * total**2)) / denom
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


class Checkpoint:
    """Per-key JSON partial results under <root>/<digest>/ for resumable sweeps."""

    def __init__(self, root: str | Path | None, digest: str):
        self.directory = Path(root) / digest if root else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / f"{key}.json"

    def load(self, key: str) -> dict[str, Any] | None:
        if self.directory is None or not self._path(key).exists():
            return None
        with open(self._path(key)) as f:
            logger.info("resuming %s from checkpoint", key)
            return json.load(f)

    def save(self, key: str, payload: dict[str, Any]) -> None:
        if self.directory is None:
            return
        tmp = self._path(key).with_suffix(".tmp")
        with open(tmp, "w") as f:
            json.dump(payload, f, sort_keys=True)
        tmp.replace(self._path(key))
