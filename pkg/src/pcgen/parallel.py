"""Index-ordered fan-out for the distance kernels."""
import os
from concurrent.futures import ThreadPoolExecutor

_default_threads = 1


def set_threads(n: int) -> None:
    global _default_threads
    _default_threads = max(1, int(n))


def thread_count(requested: int | None = None) -> int:
    env = os.environ.get("PCGEN_THREADS")
    if env:
        return max(1, int(env))
    return _default_threads if requested is None else max(1, int(requested))


def ordered_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, possibly on a pool; results keep input order."""
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
