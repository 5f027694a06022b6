"""Random-state model of many-to-one pull contention at a source rank.

A tagged rank picks one of its N-1 peers; each of the other N-2 ranks targets the
same source with probability 1/(N-1). The contention degree C counts all pulls on
that source, the tagged one included, so C - 1 ~ Binomial(N-2, 1/(N-1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ContentionPmf:
    group_size: int
    probs: dict
    degenerate: bool = False

    def __post_init__(self):
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {total}")

    def mean(self):
        return math.fsum(c * p for c, p in self.probs.items())

    def tail(self, c_min):
        return math.fsum(p for c, p in self.probs.items() if c >= c_min)


def ideal_pull_time(total_comm_time, group_size):
    if group_size < 2:
        raise ConfigError("group_size must be >= 2")
    if not total_comm_time > 0:
        raise ValueError("total_comm_time must be > 0")
    return total_comm_time / (group_size - 1)


def _binom_pmf(n, p, k):
    logp = (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * math.log(p) + (n - k) * math.log1p(-p))
    return math.exp(logp)


def contention_pmf(group_size):
    if group_size < 2:
        raise ConfigError("group_size must be >= 2")
    if group_size < 3:
        return ContentionPmf(group_size, {1: 1.0}, degenerate=True)
    n, p = group_size - 2, 1.0 / (group_size - 1)
    probs = {k + 1: _binom_pmf(n, p, k) for k in range(n + 1)}
    return ContentionPmf(group_size, probs)


def contention_mc(group_size, rounds, seed=0, chunk=1 << 18):
    """Monte Carlo estimate of the contention pmf by simulating explicit choices.

    Rank 0 is tagged. Per round it draws its source uniformly from ranks 1..N-1;
    every other non-source rank draws a target uniformly from its own N-1 peers.
    Deterministic for a fixed seed.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if group_size < 3:
        return ContentionPmf(group_size, {1: 1.0}, degenerate=True)
    rng = np.random.default_rng(seed)
    n = group_size
    counts = np.zeros(n, dtype=np.int64)
    others = np.arange(1, n)
    done = 0
    while done < rounds:
        b = min(chunk, rounds - done)
        src = rng.integers(1, n, size=b)
        # draw a peer index in [0, n-2] and skip over the drawing rank's own id
        draw = rng.integers(0, n - 1, size=(b, n - 1))
        target = draw + (draw >= others[None, :])
        competing = (target == src[:, None]) & (others[None, :] != src[:, None])
        degree = 1 + competing.sum(axis=1)
        counts += np.bincount(degree, minlength=n)[:n]
        done += b
    probs = {c: counts[c] / rounds for c in range(1, n)}
    return ContentionPmf(group_size, probs)


def serialized_latency_bound(pmf, tau):
    """Pessimistic expected pull latency E[C] * tau under full serialization of
    equal-size pulls. A bound for comparison, not a latency model."""
    return pmf.mean() * tau


def mc_tolerance(p, rounds, sigmas=3.0):
    return sigmas * math.sqrt(p * (1 - p) / rounds)
