"""Closed-form per-layer DEP vs DWDP estimate (no event simulation)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..modelspec import layer_costs
from ..placement import prefetch_bytes
from .strategies import all2all_bytes


@dataclass(frozen=True)
class AnalyticResult:
    ratio: float  # T_compute / T_prefetch, inf when nothing is prefetched
    speedup: float  # T_DEP / T_DWDP
    t_compute: float  # DWDP rank, seconds per layer
    t_prefetch: float
    t_dep_compute: float
    t_all2all: float

    @property
    def saturated(self):
        return math.isinf(self.ratio)

    @property
    def t_dep(self):
        return self.t_dep_compute + self.t_all2all

    @property
    def t_dwdp(self):
        return max(self.t_compute, self.t_prefetch)


def analytic_compare(model, gpu, placement, tokens, mean_seq_len):
    """Per-layer roofline estimate for one rank processing ``tokens`` tokens.

    The DWDP rank runs its GroupedGEMM over every expert its tokens touch (local
    plus prefetched); the DEP rank runs the same routed work against only its
    expert-parallel share of the weights, then pays dispatch and combine.
    """
    routed = tokens * model.top_k
    dwdp = layer_costs(model, tokens, mean_seq_len, routed=routed,
                       weight_experts=min(model.num_experts, routed))
    ep_share = math.ceil(model.num_experts / placement.group_size)
    dep = layer_costs(model, tokens, mean_seq_len, routed=routed,
                      weight_experts=min(ep_share, routed))
    t_compute = dwdp.time(gpu)
    t_dep_compute = dep.time(gpu)
    t_prefetch = prefetch_bytes(placement, model) / gpu.link_bw
    t_a2a = 2 * all2all_bytes(model, tokens) / gpu.link_bw
    ratio = t_compute / t_prefetch if t_prefetch > 0 else math.inf
    speedup = (t_dep_compute + t_a2a) / max(t_compute, t_prefetch)
    return AnalyticResult(ratio, speedup, t_compute, t_prefetch, t_dep_compute, t_a2a)
