import math
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    """Independent generator for one chunk; the stream depends only on (seed, chunk_index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk_index,)))


def chunk_sizes(total: int, chunk_size: int) -> list[int]:
    if total <= 0 or chunk_size <= 0:
        raise ValueError(f"chunk_sizes: total and chunk_size must be positive, got {total}, {chunk_size}")
    full, rest = divmod(total, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def parallel_map[T, R](fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Map preserving input order. workers=1 runs inline."""
    if workers < 1:
        raise ValueError(f"parallel_map: workers must be >= 1, got {workers}")
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def distance_grid(dmin: float, dmax: float, dstep: float) -> list[float]:
    if dstep <= 0:
        raise ValueError(f"distance_grid: dstep must be positive, got {dstep}")
    if dmax < dmin:
        raise ValueError(f"distance_grid: dmax < dmin ({dmax} < {dmin})")
    steps = math.floor((dmax - dmin) / dstep + 1e-9)
    return [dmin + i * dstep for i in range(steps + 1)]


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float | np.floating):
        if math.isnan(value):
            return "nan"
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def relative_error(value: float, reference: float) -> float:
    if reference == 0:
        return math.nan
    return abs(value - reference) / abs(reference)
