"""Injection streams: when messages arrive, what they carry, which key.

A stream is an iterator of ``(t_ns, value, key)`` tuples in non-decreasing
time order, bounded by the horizon. Generators and samplers take explicit
``random.Random`` instances so one seed pins the whole run.
"""

from __future__ import annotations

import bisect
import random
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

Item = Tuple[int, object, Optional[str]]
ValueFn = Callable[[int], object]
KeyFn = Callable[[int], Optional[str]]


def uniform_values(rng: random.Random, lo: int = 1, hi: int = 100) -> ValueFn:
    return lambda _i: rng.randint(lo, hi)


def constant_value(value: object) -> ValueFn:
    return lambda _i: value


def uniform_keys(rng: random.Random, n_keys: int) -> KeyFn:
    return lambda _i: f"k{rng.randrange(n_keys)}"


def zipf_keys(rng: random.Random, n_keys: int, s: float) -> KeyFn:
    """Zipf-distributed key sampler over ``n_keys`` keys with exponent ``s``.

    Uses explicit inverse-CDF sampling; key 0 is the hottest.
    """
    if n_keys < 1:
        raise ValueError("zipf needs at least one key")
    weights = [1.0 / (k ** s) for k in range(1, n_keys + 1)]
    total = sum(weights)
    cdf: List[float] = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cdf.append(acc)
    cdf[-1] = 1.0  # guard against float drift at the tail

    def sample(_i: int) -> str:
        return f"k{bisect.bisect_left(cdf, rng.random())}"

    return sample


def constant_rate(rate_hz: float, horizon_ns: int,
                  values: Optional[ValueFn] = None,
                  keys: Optional[KeyFn] = None,
                  start_ns: int = 0) -> Iterator[Item]:
    """Evenly spaced arrivals at a fixed rate."""
    if rate_hz <= 0:
        return
    period = max(1, int(1e9 / rate_hz))
    t = start_ns
    i = 0
    while t < horizon_ns:
        yield t, (values(i) if values else 1), (keys(i) if keys else None)
        i += 1
        t += period


def pareto_burst(rate_hz: float, alpha: float, horizon_ns: int,
                 rng: random.Random,
                 values: Optional[ValueFn] = None,
                 keys: Optional[KeyFn] = None,
                 start_ns: int = 0) -> Iterator[Item]:
    """Heavy-tailed inter-arrival gaps with the requested mean rate.

    ``paretovariate(alpha)`` has mean ``alpha / (alpha - 1)``, so gaps are
    scaled by ``(alpha - 1) / alpha`` to keep the long-run rate at
    ``rate_hz`` while lower alpha fattens the burst tail.
    """
    if alpha <= 1.0:
        raise ValueError("pareto alpha must exceed 1 for a finite mean")
    if rate_hz <= 0:
        return
    mean_gap = 1e9 / rate_hz
    scale = mean_gap * (alpha - 1.0) / alpha
    t = start_ns
    i = 0
    while t < horizon_ns:
        yield t, (values(i) if values else 1), (keys(i) if keys else None)
        i += 1
        t += max(1, int(scale * rng.paretovariate(alpha)))


def trace_replay(items: Iterable[Item]) -> Iterator[Item]:
    """Replay a recorded arrival sequence, enforcing time monotonicity."""
    last = -1
    for t, value, key in items:
        if t < last:
            raise ValueError(f"trace goes backwards at t={t}")
        last = t
        yield t, value, key


WORKLOAD_KINDS = ("constant_rate", "pareto_burst", "trace_replay")
