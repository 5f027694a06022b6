"""Sliced, round-robin prefetch-copy plans and the source-side queue view."""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigError

DEFAULT_SLICE_SIZE = 1 << 20


class Shard(NamedTuple):
    peer: int
    param_id: str
    size: int
    src_offset: int = 0


class Slice(NamedTuple):
    param_id: str
    src_rank: int
    src_offset: int
    dst_offset: int
    length: int


@dataclass(frozen=True)
class CopyPlan:
    slices: tuple
    slice_size: float
    dst_rank: int = 0

    @property
    def total_bytes(self):
        return sum(s.length for s in self.slices)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param_id", "src_rank", "src_offset", "dst_offset", "length"])
        w.writerows(self.slices)
        return buf.getvalue()


def round_robin(peers, phase=0):
    """Peers rotated to start at index ``phase`` (mod len)."""
    peers = list(peers)
    if not peers:
        return []
    k = phase % len(peers)
    return peers[k:] + peers[:k]


def build_copy_plan(shards, slice_size=DEFAULT_SLICE_SIZE, dst_rank=0):
    """Slice every shard and interleave peers round-robin at each offset.

    Parameters form the outer loop in first-appearance order; within a parameter,
    offsets step by ``slice_size`` and peers rotate starting at ``dst_rank`` mod the
    peer count. Peers whose shard is shorter than the current offset are skipped.
    The destination buffer of each parameter holds the peers' regions back to back.
    """
    if not slice_size > 0:
        raise ConfigError("slice_size must be > 0", "strategy.slice_size")
    by_param = OrderedDict()
    for sh in shards:
        sh = Shard(*sh)
        if sh.size <= 0:
            raise ConfigError(f"shard size must be > 0: {sh}")
        peers = by_param.setdefault(sh.param_id, OrderedDict())
        if sh.peer in peers:
            raise ConfigError(f"duplicate shard for peer {sh.peer}, param {sh.param_id!r}")
        peers[sh.peer] = sh

    slices = []
    for param_id, peers in by_param.items():
        base, region = 0, {}
        for peer, sh in peers.items():
            region[peer] = base
            base += sh.size
        order = round_robin(peers, dst_rank)
        longest = max(sh.size for sh in peers.values())
        offset = 0
        while offset < longest:
            for peer in order:
                sh = peers[peer]
                if offset >= sh.size:
                    continue
                chunk = int(min(slice_size, sh.size - offset))
                slices.append(Slice(param_id, peer, sh.src_offset + offset,
                                    region[peer] + offset, chunk))
            offset += slice_size
    return CopyPlan(tuple(slices), slice_size, dst_rank)


def slice_count(size, slice_size):
    return math.ceil(size / slice_size)


def source_queues(plans, source):
    """Per-destination pending-slice queues that ``source`` must serve.

    ``plans`` is one CopyPlan or an iterable of them (one per destination).
    Plan order is preserved within each queue.
    """
    if isinstance(plans, CopyPlan):
        plans = [plans]
    queues = OrderedDict()
    for plan in plans:
        q = deque(s for s in plan.slices if s.src_rank == source)
        if q:
            queues.setdefault(plan.dst_rank, deque()).extend(q)
    return queues


def round_robin_service(queues):
    """Service order under the rule: visit non-empty queues in turn, at most one
    slice from each per round. Returns a list of (dst_rank, Slice)."""
    queues = OrderedDict((d, deque(q)) for d, q in queues.items())
    order = []
    while any(queues.values()):
        for dst, q in queues.items():
            if q:
                order.append((dst, q.popleft()))
    return order
