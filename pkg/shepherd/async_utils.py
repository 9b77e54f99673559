# shepherd/async_utils.py
from __future__ import annotations

import asyncio
from typing import Any, Awaitable, Callable, Dict, Iterable, List, Sequence, Tuple, TypeVar

from tqdm import tqdm

from .errors import ParameterError

K = TypeVar("K")
V = TypeVar("V")
T = TypeVar("T")


async def async_map_progress(
    items: Iterable[K],
    worker: Callable[[K], Awaitable[V]],
    *,
    concurrency: int,
    desc: str,
    quiet: bool,
) -> Dict[K, V]:
    """
    Runs at most `concurrency` workers at a time behind one tqdm bar and returns
    {item: result}. Items are result keys, so they must be distinct: the CLI uses
    (sample, method) jobs or patch levels, map_ordered uses positions. The first
    failure cancels the jobs still pending and propagates.
    """
    keys = list(items)
    if len(set(keys)) != len(keys):
        raise ParameterError(f"{desc or 'async map'}: duplicate job keys")
    sem = asyncio.Semaphore(max(1, int(concurrency)))

    async def _run_one(it: K) -> Tuple[K, V]:
        async with sem:
            return it, await worker(it)

    tasks = [asyncio.create_task(_run_one(it)) for it in keys]
    out: Dict[K, V] = {}

    pbar = tqdm(total=len(tasks), disable=quiet, desc=desc)
    try:
        for fut in asyncio.as_completed(tasks):
            k, v = await fut
            out[k] = v
            pbar.update(1)
    except BaseException:
        for t in tasks:
            t.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        raise
    finally:
        pbar.close()

    return out


def map_ordered(
    fn: Callable[[T], V],
    items: Sequence[T],
    *,
    workers: int = 1,
    desc: str = "",
    quiet: bool = True,
) -> List[V]:
    """
    Run fn over items, on threads when workers > 1, and return results in input order.
    Completion order never leaks into the result, so callers can accumulate canonically.
    Must not be called from inside a running event loop.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]

    async def _one(i: int) -> V:
        return await asyncio.to_thread(fn, items[i])

    done = asyncio.run(
        async_map_progress(range(len(items)), _one, concurrency=workers, desc=desc, quiet=quiet)
    )
    return [done[i] for i in range(len(items))]


def chunked(xs: Sequence[Any], n: int) -> List[Sequence[Any]]:
    return [xs[i : i + n] for i in range(0, len(xs), n)]
