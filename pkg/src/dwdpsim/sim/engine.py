"""Deterministic event loop driving one generator program per rank.

A program yields commands and is resumed when the command completes:

``("op", category, flops, nbytes, layer, it)``
    roofline-timed compute op, slowed by interference from link traffic
``("fixed", category, duration_ns, layer, it)``
    fixed-duration op on the compute stream
``("barrier", key, layer, it)``
    wait until every rank reached ``key``; waiting time becomes SyncWait
``("prefetch", key, transfers, layer, it)``
    hand a list of (src, nbytes) pulls to the copy fabric, returns immediately
``("await", key, layer, it)``
    block until prefetch ``key`` finished; waiting time becomes SyncWait
``("warmup", key)``
    like await, but the wait is not recorded
``("begin", it)`` / ``("end", it)``
    iteration window markers
"""

from __future__ import annotations

import heapq

from ..errors import InvariantViolation
from ..hwmodel import mem_slowdown_factor, overlap_power, power_throttle_factor
from .report import COMPUTE_STREAM, COPY_STREAM, WEIGHT_WAIT, SimEvent

_FABRIC = -1


def to_ns(seconds):
    ns = int(round(seconds * 1e9))
    return 1 if ns == 0 and seconds > 0 else ns


class Engine:
    def __init__(self, num_ranks, gpu, interference=None, fabric=None, max_outstanding=2):
        self.n = num_ranks
        self.gpu = gpu
        self.interference = interference
        self.fabric = fabric
        self.max_outstanding = max_outstanding
        self.heap = []
        self.seq = 0
        self.events = []
        self.windows = [dict() for _ in range(num_ranks)]
        self.barriers = {}
        self.waiters = {}  # prefetch key -> (rank, since, layer, it)
        self.done_jobs = set()
        self.outstanding = [set() for _ in range(num_ranks)]
        self.fabric_version = 0
        self._throttle = {}

    # -- scheduling ----------------------------------------------------------
    def _push(self, t, rank, kind, payload=None):
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, 0, self.seq, kind, payload))

    def _wake_fabric(self):
        if self.fabric is None:
            return
        self.fabric_version += 1
        t = self.fabric.next_time()
        if t is not None:
            self._push(t, _FABRIC, "fabric", self.fabric_version)

    def run(self, programs):
        self.programs = programs
        for rank in range(self.n):
            self._push(0, rank, "resume")
        while self.heap:
            t, rank, _, _, kind, payload = heapq.heappop(self.heap)
            if kind == "fabric":
                if payload == self.fabric_version:
                    self._finish_jobs(self.fabric.step(t), t)
                    self._wake_fabric()
            else:
                self._resume(rank, t)
        pending = [k for k, v in self.barriers.items() if v]
        if pending or self.waiters:
            raise InvariantViolation(f"simulation stalled: barriers {pending[:3]}, waits {list(self.waiters)[:3]}")
        return self.events

    # -- helpers -------------------------------------------------------------
    def _record(self, rank, stream, category, start, end, layer, it, label="", nbytes=0.0):
        if end > start or category == "P2PCopy":
            self.events.append(SimEvent(rank, stream, category, start, end, layer, it, label, nbytes))

    def op_seconds(self, category, flops, nbytes, rank):
        gpu = self.gpu
        comp = flops / gpu.peak_flops
        mem = nbytes / gpu.mem_bw
        ip = self.interference
        if ip is not None and self.fabric is not None and (ip.mem_interference_on or ip.power_interference_on):
            rate = self.fabric.rank_rate(rank)
            if rate > 0:
                if ip.power_interference_on:
                    thr = self._throttle.get(category)
                    if thr is None:
                        thr = self._throttle[category] = power_throttle_factor(overlap_power(category, ip, gpu), ip)
                    comp /= thr
                    mem /= thr
                if ip.mem_interference_on:
                    mem *= mem_slowdown_factor(rate, gpu)
        return max(comp, mem)

    def _finish_jobs(self, jobs, t):
        for job in jobs:
            self.done_jobs.add(job.key)
            rank, layer, it = job.dst, job.key[2], job.key[1]
            self.outstanding[rank].discard(job.key)
            self._record(rank, COPY_STREAM, "P2PCopy", job.submitted, t, layer, it, nbytes=job.nbytes)
            w = self.waiters.pop(job.key, None)
            if w is not None:
                self.done_jobs.discard(job.key)
                wrank, since, wlayer, wit = w
                if wlayer is not None:
                    self._record(wrank, COMPUTE_STREAM, "SyncWait", since, t, wlayer, wit, WEIGHT_WAIT)
                self._push(t, wrank, "resume")

    def _resume(self, rank, t):
        gen = self.programs[rank]
        while True:
            try:
                cmd = next(gen)
            except StopIteration:
                return
            kind = cmd[0]
            if kind == "op":
                _, cat, flops, nbytes, layer, it = cmd
                d = to_ns(self.op_seconds(cat, flops, nbytes, rank))
                if d == 0:
                    continue
                self._record(rank, COMPUTE_STREAM, cat, t, t + d, layer, it)
                self._push(t + d, rank, "resume")
                return
            if kind == "fixed":
                _, cat, d, layer, it = cmd
                if d <= 0:
                    continue
                self._record(rank, COMPUTE_STREAM, cat, t, t + d, layer, it)
                self._push(t + d, rank, "resume")
                return
            if kind == "barrier":
                _, key, layer, it = cmd
                arrived = self.barriers.setdefault(key, [])
                arrived.append((rank, t, layer, it))
                if len(arrived) < self.n:
                    return
                release = max(a[1] for a in arrived)
                for r, since, lay, i in arrived:
                    self._record(r, COMPUTE_STREAM, "SyncWait", since, release, lay, i)
                    if r != rank or release != t:
                        self._push(release, r, "resume")
                self.barriers[key] = []
                if release != t:
                    return
                continue
            if kind == "prefetch":
                _, key, transfers, layer, it = cmd
                if len(self.outstanding[rank]) >= self.max_outstanding:
                    raise InvariantViolation(f"rank {rank}: more than {self.max_outstanding} layers in flight")
                self.outstanding[rank].add(key)
                done = self.fabric.submit(t, rank, key, transfers)
                self._finish_jobs(done, t)
                self._wake_fabric()
                continue
            if kind in ("await", "warmup"):
                key = cmd[1]
                layer, it = (cmd[2], cmd[3]) if kind == "await" else (None, None)
                if key in self.done_jobs:
                    self.done_jobs.discard(key)
                    continue
                self.waiters[key] = (rank, t, layer, it)
                return
            if kind == "begin":
                self.windows[rank][cmd[1]] = [t, None]
                continue
            if kind == "end":
                self.windows[rank][cmd[1]][1] = t
                continue
            raise InvariantViolation(f"unknown command {cmd!r}")
