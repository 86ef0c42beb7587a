"""Replica-chunked execution with results merged in replica order."""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

DEFAULT_CHUNK = 4096


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def chunks(start, count, size=DEFAULT_CHUNK):
    out = []
    s = start
    end = start + count
    while s < end:
        out.append((s, min(size, end - s)))
        s += size
    return out


def map_replicas(fn, start, count, *args, workers=1, chunk=DEFAULT_CHUNK):
    """Concatenate fn(chunk_start, chunk_count, *args) over replica chunks.

    Each chunk depends only on its replica indices, so the merged array is
    identical for any worker count.
    """
    parts = chunks(start, count, chunk)
    if workers <= 1 or len(parts) <= 1:
        res = [fn(s, c, *args) for s, c in parts]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(fn, s, c, *args) for s, c in parts]
            res = [f.result() for f in futs]
    if not res:
        return fn(start, 0, *args)
    return np.concatenate(res)
