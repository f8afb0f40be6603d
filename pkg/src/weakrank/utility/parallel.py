import logging
import os
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

from joblib import Parallel, delayed

from weakrank import config as cfg

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

def resolve_n_jobs(threads: Optional[int] = None) -> int:
    """Worker count: explicit `threads` or the CPU count, capped by WEAKRANK_THREADS."""
    n_jobs = threads if threads and threads > 0 else (os.cpu_count() or 1)
    cap = os.environ.get(cfg.THREADS_ENV_VAR)
    if cap:
        try:
            cap_value = int(cap)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", cfg.THREADS_ENV_VAR, cap)
        else:
            if cap_value > 0:
                n_jobs = min(n_jobs, cap_value)
    return max(1, n_jobs)

def make_blocks(n_items: int, block_size: int) -> List[range]:
    """Split range(n_items) into consecutive blocks; boundaries depend only on `block_size`."""
    return [range(start, min(start + block_size, n_items))
            for start in range(0, n_items, block_size)]

def map_blocks(func: Callable[[T], R], blocks: Sequence[T], n_jobs: int) -> List[R]:
    """Apply `func` to every block on a thread pool, returning results in block order."""
    if n_jobs <= 1 or len(blocks) <= 1:
        return [func(block) for block in blocks]
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(func)(block) for block in blocks)

def chunked(items: Sequence[T], size: int) -> Iterable[Sequence[T]]:
    for start in range(0, len(items), size):
        yield items[start:start + size]
