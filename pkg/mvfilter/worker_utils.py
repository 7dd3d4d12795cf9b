from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar
from .context import RunContext, default_threads

T = TypeVar('T')
R = TypeVar('R')


def initialize_executor(context: RunContext):
    if context.threads is None:
        context.threads = default_threads()
    if context.threads > 1:
        context.executor = ThreadPoolExecutor(max_workers=context.threads, thread_name_prefix='mvfilter')


def close_executor(context: RunContext):
    if context.executor:
        context.executor.shutdown(wait=True)
        context.executor = None


def map_ordered(context: Optional[RunContext], fn: Callable[[T], R], jobs: Iterable[T]) -> List[R]:
    '''
    Run independent jobs, possibly in parallel, and return the results in job order.
    The merge order never depends on scheduling, so reductions over the results are seed-stable.
    '''
    jobs = list(jobs)
    if context is None or context.executor is None:
        return [fn(job) for job in jobs]
    return list(context.executor.map(fn, jobs))
