"""
Work pool for independent jobs (orbits, sweep points, experiments).

Jobs must be picklable top-level functions. A pool of one runs in-process.
"""
import logging
import multiprocessing
from typing import Callable, Iterable, List

logger = logging.getLogger("work_pool")


def pool_map(func: Callable, jobs: Iterable, threads: int = 1) -> List:
    """map(func, jobs) over a process pool; results keep the job order"""
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    workers = min(threads, len(jobs))
    logger.info(f"Running {len(jobs)} job(s) on {workers} worker processes")
    with multiprocessing.Pool(processes=workers) as pool:
        return pool.map(func, jobs)


def make_mapper(threads: int) -> Callable:
    """map-like callable bound to a pool size"""
    def mapper(func, jobs):
        return pool_map(func, jobs, threads)
    return mapper
