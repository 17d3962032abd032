"""Worker-count resolution (BNDL_THREADS) and a deterministic ordered map."""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


def resolve_threads(requested=None, deterministic=False):
    """Number of workers: --deterministic forces 1; BNDL_THREADS=0 means auto."""
    if deterministic:
        return 1
    if requested is None:
        raw = os.environ.get("BNDL_THREADS", "1")
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigError(f"BNDL_THREADS must be an integer, got {raw!r}")
    if requested == 0:
        return os.cpu_count() or 1
    if requested < 0:
        raise ConfigError("worker count must be non-negative")
    return requested


def map_ordered(fn, items, threads=1):
    """Map preserving input order; results are independent of worker count."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
