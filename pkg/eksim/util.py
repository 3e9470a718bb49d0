import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime, timezone
from typing import Callable, Iterable, List, Optional


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Iterable, threads: Optional[int] = None,
                 show_progress: bool = False, label: str = None) -> List:
    """
    Apply fn to every item on a thread pool.
    - threads: int = None
        Worker cap. 1 runs inline; None uses the CPU count.
    - show_progress: bool = False
        Show a click progress bar on stderr while items complete.
    Results come back in input order whatever the completion order.
    """
    items = list(items)
    threads = threads or default_threads()
    results = [None] * len(items)

    if threads == 1 or len(items) <= 1:
        with _progress(len(items), show_progress, label) as bar:
            for i, item in enumerate(items):
                results[i] = fn(item)
                bar.update(1)
        return results

    logging.debug(f"Running {len(items)} tasks on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
        with _progress(len(items), show_progress, label) as bar:
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                bar.update(1)
    return results


class _NoProgress:
    def __enter__(self):
        return self

    def __exit__(self, *args):
        return False

    def update(self, n):
        pass


def _progress(length: int, show: bool, label: str = None):
    if not show:
        return _NoProgress()

    from click import progressbar

    return progressbar(length=length, label=label, file=sys.stderr)


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
