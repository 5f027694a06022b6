"""Per-rank expert placement with optional redundancy and fetch-source assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, InvariantViolation
from .modelspec import expert_shard_bytes


@dataclass(frozen=True)
class PlacementPlan:
    num_experts: int
    group_size: int
    local_count: int
    local_sets: tuple  # per rank: tuple of expert ids in storage order
    fetch_lists: tuple  # per rank: tuple of (expert, source_rank)

    @property
    def redundancy(self):
        return self.group_size * self.local_count - self.num_experts

    def holders(self, expert):
        return [r for r, local in enumerate(self.local_sets) if expert in local]

    def source_blocks(self, rank):
        """Experts fetched by ``rank`` grouped by source, as {source: [expert, ...]}
        ordered by each expert's position in the source's storage."""
        blocks = {}
        for expert, src in self.fetch_lists[rank]:
            blocks.setdefault(src, []).append(expert)
        for src, experts in blocks.items():
            pos = {e: i for i, e in enumerate(self.local_sets[src])}
            experts.sort(key=pos.__getitem__)
        return dict(sorted(blocks.items()))

    def validate(self):
        everything = set(range(self.num_experts))
        covered = set().union(*map(set, self.local_sets)) if self.local_sets else set()
        if covered != everything:
            raise InvariantViolation(f"uncovered experts {sorted(everything - covered)[:8]}")
        for rank, (local, fetch) in enumerate(zip(self.local_sets, self.fetch_lists)):
            if len(local) != self.local_count or len(set(local)) != len(local):
                raise InvariantViolation(f"rank {rank}: local set size != {self.local_count}")
            fetched = [e for e, _ in fetch]
            if len(set(fetched)) != len(fetched) or set(fetched) & set(local):
                raise InvariantViolation(f"rank {rank}: fetch list overlaps or repeats")
            if set(fetched) | set(local) != everything:
                raise InvariantViolation(f"rank {rank}: local + fetched != all experts")
            for e, src in fetch:
                if src == rank or e not in self.local_sets[src]:
                    raise InvariantViolation(f"rank {rank}: source {src} does not hold expert {e}")
        return self

    def describe(self):
        """Human-readable rank -> expert-range block for reports."""
        lines = [f"placement: experts={self.num_experts} group_size={self.group_size} "
                 f"local_count={self.local_count} redundancy={self.redundancy}"]
        for rank, local in enumerate(self.local_sets):
            lines.append(f"  rank {rank}: local {_ranges(local)}")
            for src, experts in self.source_blocks(rank).items():
                lines.append(f"    fetch from {src}: {_ranges(experts)} ({len(experts)} experts)")
        return "\n".join(lines)


def _ranges(ids):
    ids = list(ids)
    if not ids:
        return "-"
    out, start, prev = [], ids[0], ids[0]
    for e in ids[1:]:
        if e == prev + 1:
            prev = e
            continue
        out.append(f"{start}-{prev}" if start != prev else str(start))
        start = prev = e
    out.append(f"{start}-{prev}" if start != prev else str(start))
    return ",".join(out)


def _local_sets(num_experts, group_size, local_count):
    # Block starts at floor(r*E/N): equals r*floor(E/N) when E mod N <= 1, and
    # keeps every gap <= ceil(E/N) so coverage holds for any remainder.
    return tuple(
        tuple((rank * num_experts // group_size + i) % num_experts for i in range(local_count))
        for rank in range(group_size)
    )


def build_placement(num_experts, group_size, extra_redundancy=0):
    if group_size < 2:
        raise ConfigError("DWDP group needs at least 2 ranks", "strategy.group_size")
    if num_experts < group_size:
        raise ConfigError("num_experts must be >= group_size", "model.num_experts")
    if extra_redundancy < 0:
        raise ConfigError("must be >= 0", "strategy.extra_redundancy")
    local_count = min(num_experts, math.ceil(num_experts / group_size) + extra_redundancy)
    local_sets = _local_sets(num_experts, group_size, local_count)
    plan = PlacementPlan(num_experts, group_size, local_count, local_sets, ())
    return PlacementPlan(num_experts, group_size, local_count, local_sets,
                         assign_fetch_sources(plan)).validate()


def replicated_placement(num_experts, group_size):
    """Every rank holds every expert: DWDP degenerates to plain data parallelism."""
    if group_size < 1:
        raise ConfigError("must be >= 1", "strategy.group_size")
    local = tuple(range(num_experts))
    return PlacementPlan(num_experts, group_size, num_experts, (local,) * group_size,
                         ((),) * group_size)


def assign_fetch_sources(plan):
    """Pick one holder per (rank, missing expert), balancing per-source load.

    Experts with fewer candidate holders are assigned first; each goes to the
    least-loaded holder so far, ties to the lowest rank.
    """
    holders = {}
    for rank, local in enumerate(plan.local_sets):
        for e in local:
            holders.setdefault(e, []).append(rank)
    fetch_lists = []
    for rank, local in enumerate(plan.local_sets):
        local_set = set(local)
        missing = [e for e in range(plan.num_experts) if e not in local_set]
        candidates = {}
        for e in missing:
            cands = [r for r in holders.get(e, ()) if r != rank]
            if not cands:
                raise InvariantViolation(f"expert {e} has no holder reachable from rank {rank}")
            candidates[e] = cands
        load = {}
        chosen = {}
        for e in sorted(missing, key=lambda e: (len(candidates[e]), e)):
            src = min(candidates[e], key=lambda r: (load.get(r, 0), r))
            load[src] = load.get(src, 0) + 1
            chosen[e] = src
        fetch_lists.append(tuple((e, chosen[e]) for e in missing))
    return tuple(fetch_lists)


def prefetch_bytes(plan, model, rank=0):
    """Remote weight bytes a rank pulls to assemble one MoE layer."""
    if not 0 <= rank < plan.group_size:
        raise ValueError(f"rank {rank} outside group of {plan.group_size}")
    return (plan.num_experts - plan.local_count) * expert_shard_bytes(model)
