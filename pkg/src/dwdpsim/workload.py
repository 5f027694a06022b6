"""Per-rank request batches with controllable sequence-length and routing imbalance."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ISL_KINDS = ("fixed", "uniform_ratio", "normal")
ROUTING_MODES = ("multinomial", "balanced")


@dataclass(frozen=True)
class IslDist:
    """``fixed(length)``, ``uniform_ratio(length, ratio)`` over [ratio*length, length],
    or ``normal(length, std)`` truncated to [1, max_num_tokens]."""

    kind: str = "fixed"
    length: int = 8192
    ratio: float = 1.0
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ISL_KINDS:
            raise ConfigError(f"must be one of {ISL_KINDS}", "workload.isl.kind")
        if self.length < 1:
            raise ConfigError("must be >= 1", "workload.isl.length")
        if not 0 < self.ratio <= 1:
            raise ConfigError("must be in (0, 1]", "workload.isl.ratio")
        if self.std < 0:
            raise ConfigError("must be >= 0", "workload.isl.std")

    def bounds(self, max_num_tokens):
        if self.kind == "fixed":
            return self.length, self.length
        if self.kind == "uniform_ratio":
            return math.ceil(self.ratio * self.length), self.length
        return 1, max_num_tokens

    def length_cv(self):
        """Coefficient of variation of a single request length (untruncated)."""
        if self.kind == "fixed":
            return 0.0
        if self.kind == "uniform_ratio":
            return uniform_ratio_cv(self.ratio)
        return self.std / self.length

    def sample(self, rng, n, max_num_tokens):
        if self.kind == "fixed":
            return np.full(n, self.length, dtype=np.int64)
        if self.kind == "uniform_ratio":
            lo, hi = self.bounds(max_num_tokens)
            return rng.integers(lo, hi + 1, size=n)
        x = np.rint(rng.normal(self.length, self.std, size=n))
        return np.clip(x, 1, max_num_tokens).astype(np.int64)


@dataclass(frozen=True)
class WorkloadSpec:
    isl: IslDist = field(default_factory=IslDist)
    max_num_tokens: int = 32768
    batch_per_rank: int = 1
    routing_skew: float = 0.0
    routing: str = "multinomial"
    seed: int = 0

    def __post_init__(self):
        if self.batch_per_rank < 1:
            raise ConfigError("must be >= 1", "workload.batch_per_rank")
        if self.routing_skew < 0:
            raise ConfigError("must be >= 0", "workload.routing_skew")
        if self.routing not in ROUTING_MODES:
            raise ConfigError(f"must be one of {ROUTING_MODES}", "workload.routing")
        lo, hi = self.isl.bounds(self.max_num_tokens)
        if self.max_num_tokens < hi:
            raise ConfigError(f"must be >= largest possible ISL ({hi})", "workload.max_num_tokens")


@dataclass(frozen=True)
class RankBatch:
    """One iteration's work: request lengths and routed expert counts per rank."""

    requests: tuple  # per rank: tuple of request lengths
    routed: np.ndarray  # shape (ranks, experts)

    @property
    def num_ranks(self):
        return len(self.requests)

    @property
    def tokens(self):
        return tuple(sum(r) for r in self.requests)

    def mean_seq_len(self, rank):
        """Mean causal context per token over the rank's requests."""
        reqs = self.requests[rank]
        t = sum(reqs)
        return sum(n * (n + 1) / 2 for n in reqs) / t if t else 0.0

    def replace_rank(self, rank, requests, routed_row):
        reqs = list(self.requests)
        reqs[rank] = tuple(int(x) for x in requests)
        routed = self.routed.copy()
        routed[rank] = routed_row
        return RankBatch(tuple(reqs), routed)


def uniform_ratio_cv(ratio):
    return (1 - ratio) / ((1 + ratio) * math.sqrt(3))


def ratio_for_cv(cv):
    """Inverse of ``uniform_ratio_cv``: lower-bound ratio giving length CV ``cv``."""
    max_cv = 1 / math.sqrt(3)
    if not 0 <= cv < max_cv:
        raise ConfigError(f"uniform family supports CV in [0, {max_cv:.4f})", "sweep.values")
    k = cv * math.sqrt(3)
    return (1 - k) / (1 + k)


def workload_for_cv(base, target_cv, family="normal"):
    """Copy of ``base`` whose per-rank token count has coefficient of variation
    ``target_cv`` (request lengths iid, ``batch_per_rank`` per rank)."""
    length_cv = target_cv * math.sqrt(base.batch_per_rank)
    if family == "uniform_ratio":
        isl = IslDist("uniform_ratio", base.isl.length, ratio=ratio_for_cv(length_cv))
    elif family == "normal":
        isl = IslDist("normal" if length_cv > 0 else "fixed", base.isl.length, std=length_cv * base.isl.length)
    else:
        raise ConfigError(f"unknown family {family!r}")
    return WorkloadSpec(isl, base.max_num_tokens, base.batch_per_rank, base.routing_skew,
                        base.routing, base.seed)


def zipf_popularity(num_experts, skew):
    w = 1.0 / np.arange(1, num_experts + 1, dtype=float) ** skew
    return w / w.sum()


def route_tokens(tokens, model, routing_skew=0.0, seed=0, balanced=False):
    """Per-expert assignment counts for ``tokens`` tokens (``tokens * top_k`` total).

    Multinomial over Zipf(``routing_skew``) popularity; expert 0 is the hottest.
    ``balanced`` spreads assignments as evenly as possible instead of sampling.
    ``seed`` may be an int or a numpy Generator.
    """
    n = int(tokens) * model.top_k
    e = model.num_experts
    if balanced:
        counts = np.full(e, n // e, dtype=np.int64)
        counts[: n % e] += 1
        return counts
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n == 0:
        return np.zeros(e, dtype=np.int64)
    return rng.multinomial(n, zipf_popularity(e, routing_skew)).astype(np.int64)


def imbalance_cv(batch):
    """Population std / mean of per-rank token counts."""
    counts = np.asarray(batch.tokens if isinstance(batch, RankBatch) else batch, dtype=float)
    if counts.size < 2:
        raise ValueError("need at least 2 ranks")
    mean = counts.mean()
    if mean == 0:
        raise ValueError("zero mean token count")
    return float(counts.std() / mean)


def sample_batches(spec, model, num_ranks, iterations):
    """Deterministic per-rank batch sequence.

    Each rank draws ``batch_per_rank`` new requests per iteration into its own
    backlog and greedily takes requests from the head of the backlog while the
    total stays within ``max_num_tokens``; the rest waits for the next iteration.
    """
    rngs = [np.random.default_rng([spec.seed, rank]) for rank in range(num_ranks)]
    backlog = [[] for _ in range(num_ranks)]
    out = []
    for _ in range(iterations):
        reqs, routed = [], np.zeros((num_ranks, model.num_experts), dtype=np.int64)
        for rank in range(num_ranks):
            rng = rngs[rank]
            backlog[rank].extend(int(x) for x in spec.isl.sample(rng, spec.batch_per_rank, spec.max_num_tokens))
            taken, total = [], 0
            while backlog[rank] and total + backlog[rank][0] <= spec.max_num_tokens:
                total += backlog[rank][0]
                taken.append(backlog[rank].pop(0))
            reqs.append(tuple(taken))
            routed[rank] = route_tokens(total, model, spec.routing_skew, rng,
                                        balanced=spec.routing == "balanced")
        out.append(RankBatch(tuple(reqs), routed))
    return out


def batches_to_csv(batches):
    """Long-format CSV: iteration, rank, request lengths (space separated), routed counts."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "rank", "requests", "routed"])
    for it, b in enumerate(batches):
        for rank, reqs in enumerate(b.requests):
            w.writerow([it, rank, " ".join(map(str, reqs)), " ".join(map(str, b.routed[rank].tolist()))])
    return buf.getvalue()


def batches_from_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        return []
    iters = {}
    for row in rows:
        it, rank = int(row["iteration"]), int(row["rank"])
        reqs = tuple(int(x) for x in row["requests"].split())
        routed = [int(x) for x in row["routed"].split()]
        iters.setdefault(it, {})[rank] = (reqs, routed)
    out = []
    for it in sorted(iters):
        ranks = iters[it]
        order = sorted(ranks)
        if order != list(range(len(order))):
            raise ConfigError(f"iteration {it}: ranks {order} not contiguous", "workload.replay")
        out.append(RankBatch(tuple(ranks[r][0] for r in order),
                             np.array([ranks[r][1] for r in order], dtype=np.int64)))
    return out
