"""
Ordered thread-pool mapping shared by the round loop and the valuation harnesses.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item and return results in input order.

    With threads <= 1 (or a single item) the calls run inline on the calling
    thread. Exceptions from any call propagate after all submitted work finishes.
    """
    if threads is None:
        from fedce.core.config import settings

        threads = settings.THREADS
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        futures = [pool.submit(fn, item) for item in items]
        return [future.result() for future in futures]
