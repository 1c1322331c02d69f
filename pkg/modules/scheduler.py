# modules/scheduler.py
"""
Fixed-size worker pool and reproducible random streams.

Tasks are independent; results always come back in task order so merges are
deterministic whatever the pool size.
"""

import logging
from typing import Callable, List, Sequence

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

logger = logging.getLogger(__name__)


def rng_streams(seed: int, count: int) -> List[np.random.Generator]:
    """One counter-based (Philox) generator per task, derived by index from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def chunk_sizes(total: int, chunk: int) -> List[int]:
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def run_tasks(func: Callable, tasks: Sequence, threads: int = 1,
              progress: bool = False, desc: str = None) -> list:
    """
    Evaluate ``func`` on every task.

    ``func`` and the tasks must be picklable when ``threads > 1`` (module-level
    functions, plain data).
    """
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [func(t) for t in tqdm(tasks, desc=desc, disable=not progress)]

    logger.debug(f"Dispatching {len(tasks)} tasks over {threads} workers")
    return Parallel(n_jobs=threads)(
        delayed(func)(t) for t in tqdm(tasks, desc=desc, disable=not progress)
    )
