"""Fluid model of peer-to-peer pulls served by source-side copy engines.

Each in-flight transfer is a flow from a source rank to a destination rank. Flow
rates are the max-min fair allocation under two capacities per rank: source
egress and destination ingress, both ``link_bw``. Destinations issue transfers in
plan order with a bounded window; sources admit at most ``ce_inflight`` transfers
at once, FIFO in monolithic mode and round-robin over per-destination queues in
TDM mode. With contention disabled sources admit everything and only the
destination's ingress limits its flows, so ranks cannot affect each other.
"""

from __future__ import annotations

import math
from collections import OrderedDict, deque

from ..errors import InvariantViolation

_EPS = 1e-6  # bytes


class Transfer:
    __slots__ = ("src", "dst", "nbytes", "remaining", "rate", "finish", "job")

    def __init__(self, src, dst, nbytes, job):
        self.src = src
        self.dst = dst
        self.nbytes = nbytes
        self.remaining = float(nbytes)
        self.rate = 0.0
        self.finish = None
        self.job = job


class _Job:
    __slots__ = ("key", "dst", "pending", "nbytes", "submitted", "first_start", "done_at")

    def __init__(self, key, dst, count, nbytes, now):
        self.key = key
        self.dst = dst
        self.pending = count
        self.nbytes = nbytes
        self.submitted = now
        self.first_start = None
        self.done_at = None


class CopyFabric:
    def __init__(self, num_ranks, link_bw, ce_inflight=2, tdm=True, contention=True):
        self.n = num_ranks
        self.bw = link_bw / 1e9  # bytes per ns
        self.link_bw = link_bw
        self.tdm = tdm
        self.contention = contention
        self.window = ce_inflight if tdm else 1
        self.slots = ce_inflight if contention else math.inf
        self.now = 0
        self.pending = [deque() for _ in range(num_ranks)]  # per dst, not yet issued
        self.outstanding = [0] * num_ranks  # per dst, issued and not finished
        self.fifo = [deque() for _ in range(num_ranks)]  # per src, monolithic
        self.rr = [OrderedDict() for _ in range(num_ranks)]  # per src: dst -> deque, TDM
        self.rr_next = [0] * num_ranks
        self.inflight = [0] * num_ranks  # per src
        self.active = []
        self.jobs = {}
        self.bytes_moved = [0.0] * num_ranks  # per dst
        self._rate_cache = {}

    # -- public --------------------------------------------------------------
    def submit(self, now, dst, key, transfers):
        """Queue ``transfers`` (list of (src, nbytes)) as one job for ``dst``.

        Returns the list of jobs completed as a side effect (only empty jobs)."""
        self.advance(now)
        transfers = [(s, b) for s, b in transfers if b > 0]
        job = _Job(key, dst, len(transfers), sum(b for _, b in transfers), now)
        if key in self.jobs:
            raise InvariantViolation(f"duplicate prefetch job {key}")
        self.jobs[key] = job
        if not transfers:
            job.done_at = now
            return [job]
        for src, nbytes in transfers:
            if src == dst:
                raise InvariantViolation(f"rank {dst} pulling from itself")
            self.pending[dst].append(Transfer(src, dst, nbytes, job))
        self._schedule()
        return []

    def next_time(self):
        if not self.active:
            return None
        return min(f.finish for f in self.active)

    def step(self, now):
        """Advance to ``now`` and retire every transfer finishing by then.
        Returns jobs that completed."""
        self.advance(now)
        done_jobs = []
        still = []
        for f in self.active:
            if f.finish <= now:
                f.remaining = 0.0
                self.inflight[f.src] -= 1
                self.outstanding[f.dst] -= 1
                self.bytes_moved[f.dst] += f.nbytes
                job = f.job
                job.pending -= 1
                if job.pending == 0:
                    job.done_at = now
                    done_jobs.append(job)
            else:
                still.append(f)
        if len(still) != len(self.active):
            self.active = still
            self._schedule()
        return done_jobs

    def rank_rate(self, rank):
        """Current link traffic through ``rank`` (ingress + egress), bytes/s."""
        total = 0.0
        for f in self.active:
            if f.src == rank or f.dst == rank:
                total += f.rate
        return total * 1e9

    def degree(self, src):
        """Pulls currently targeting ``src``: admitted plus queued."""
        queued = len(self.fifo[src]) + sum(len(q) for q in self.rr[src].values())
        return self.inflight[src] + queued

    # -- internals -----------------------------------------------------------
    def advance(self, now):
        if now < self.now:
            raise InvariantViolation(f"fabric time went backwards: {now} < {self.now}")
        dt = now - self.now
        if dt:
            for f in self.active:
                f.remaining -= f.rate * dt
        self.now = now

    def _schedule(self):
        self._issue()
        self._admit()
        self._rates()

    def _issue(self):
        for dst in range(self.n):
            pend = self.pending[dst]
            while pend and self.outstanding[dst] < self.window:
                f = pend.popleft()
                self.outstanding[dst] += 1
                if self.tdm:
                    q = self.rr[f.src].get(dst)
                    if q is None:
                        q = self.rr[f.src][dst] = deque()
                    q.append(f)
                else:
                    self.fifo[f.src].append(f)

    def _admit(self):
        now = self.now
        for src in range(self.n):
            while self.inflight[src] < self.slots:
                f = self._next_for(src)
                if f is None:
                    break
                self.inflight[src] += 1
                if f.job.first_start is None:
                    f.job.first_start = now
                self.active.append(f)

    def _next_for(self, src):
        if not self.tdm:
            q = self.fifo[src]
            return q.popleft() if q else None
        queues = self.rr[src]
        if not queues:
            return None
        # visit destinations in rank order, resuming after the last one served
        dsts = sorted(queues)
        start = self.rr_next[src]
        pick = None
        for d in dsts:
            if d >= start:
                pick = d
                break
        if pick is None:
            pick = dsts[0]
        q = queues[pick]
        f = q.popleft()
        if not q:
            del queues[pick]
        self.rr_next[src] = pick + 1
        return f

    def _rates(self):
        flows = self.active
        if not flows:
            return
        # allocations depend only on the (src, dst) multiset; patterns recur constantly
        key = tuple((f.src, f.dst) for f in flows)
        rates = self._rate_cache.get(key)
        if rates is None:
            rates = self._rate_cache[key] = self._allocate(key)
        now = self.now
        for f, rate in zip(flows, rates):
            f.rate = rate
            if f.remaining <= _EPS:
                f.finish = now
            else:
                f.finish = now + max(1, math.ceil(f.remaining / rate - 1e-9))

    def _allocate(self, pairs):
        bw = self.bw
        if not self.contention:
            per_dst = {}
            for _, d in pairs:
                per_dst[d] = per_dst.get(d, 0) + 1
            return [bw / per_dst[d] for _, d in pairs]
        return _max_min(pairs, self.n, bw)


def _max_min(pairs, n, capacity):
    """Progressive filling over source-egress (id src) and destination-ingress
    (id n + dst) resources, all with the same capacity. Returns one rate per pair."""
    cap = {}
    count = {}
    for s, d in pairs:
        for r in (s, n + d):
            count[r] = count.get(r, 0) + 1
            cap[r] = capacity
    rates = [None] * len(pairs)
    unfixed = list(range(len(pairs)))
    while unfixed:
        share = min(cap[r] / c for r, c in count.items() if c > 0)
        tight = {r for r, c in count.items() if c > 0 and cap[r] / c <= share * (1 + 1e-12)}
        rest = []
        for i in unfixed:
            s, d = pairs[i]
            if s in tight or (n + d) in tight:
                rates[i] = share
                for r in (s, n + d):
                    cap[r] -= share
                    count[r] -= 1
            else:
                rest.append(i)
        unfixed = rest
    return rates
