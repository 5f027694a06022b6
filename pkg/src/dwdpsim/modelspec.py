"""MoE transformer description and per-layer operator costs (FLOPs, bytes)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigError
from .hwmodel import COMPUTE_CATEGORIES, roofline_time


@dataclass(frozen=True)
class MoeModelSpec:
    """Architecture of an MoE decoder plus the cost-model calibration knobs.

    The four ``*_scale`` / ``*_factor`` fields are the per-category calibration
    scalars: Attention scales the attention-score FLOPs, GroupedGEMM scales its
    memory traffic, DenseGEMM scales its FLOPs and Others multiplies activation
    traffic to size the memory-bound elementwise kernels.
    """

    num_layers: int
    hidden_dim: int
    num_experts: int
    top_k: int
    expert_ffn_dim: int
    shared_ffn_dim: int
    attn_proj_params: int
    weight_bytes_per_param: float
    kv_bytes_per_token_per_layer: float
    act_bytes: float = 1.0
    attn_score_scale: float = 1.0
    grouped_bytes_scale: float = 1.0
    dense_flop_scale: float = 1.0
    others_bytes_factor: float = 1.0

    def __post_init__(self):
        positive = ("num_layers", "hidden_dim", "num_experts", "top_k", "expert_ffn_dim",
                    "attn_proj_params", "weight_bytes_per_param", "act_bytes",
                    "attn_score_scale", "grouped_bytes_scale", "dense_flop_scale")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", f"model.{name}")
        for name in ("shared_ffn_dim", "kv_bytes_per_token_per_layer", "others_bytes_factor"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"model.{name}")
        if not 1 <= self.top_k <= self.num_experts:
            raise ConfigError("must satisfy 1 <= top_k <= num_experts", "model.top_k")

    def param_bytes_per_expert(self):
        """Bytes per expert for each stacked MoE weight tensor, in load order."""
        h, f, wb = self.hidden_dim, self.expert_ffn_dim, self.weight_bytes_per_param
        return {"w13": 2 * h * f * wb, "w2": h * f * wb}

    def moe_layer_bytes(self):
        """Total routed + shared expert weight bytes of one layer."""
        shared = 3 * self.hidden_dim * self.shared_ffn_dim * self.weight_bytes_per_param
        return self.num_experts * expert_shard_bytes(self) + shared


class LayerOp(NamedTuple):
    category: str
    flops: float
    bytes: float


@dataclass(frozen=True)
class LayerWork:
    attn: tuple
    moe: tuple

    def __post_init__(self):
        for op in self.attn + self.moe:
            if op.category not in COMPUTE_CATEGORIES:
                raise ValueError(f"unknown category {op.category!r}")
            if op.flops < 0 or op.bytes < 0:
                raise ValueError(f"negative cost in {op}")

    @property
    def ops(self):
        return self.attn + self.moe

    def flops(self, category):
        return sum(op.flops for op in self.ops if op.category == category)

    def time(self, gpu):
        return sum(roofline_time(op.flops, op.bytes, gpu) for op in self.ops)


def expert_shard_bytes(model):
    """Weight bytes of one routed expert (gate, up and down projections)."""
    return 3 * model.hidden_dim * model.expert_ffn_dim * model.weight_bytes_per_param


def layer_costs(model, tokens, mean_seq_len, routed=None, weight_experts=None):
    """Operator costs of one layer processing ``tokens`` tokens.

    ``mean_seq_len`` is the mean attended context per token (about L/2 for a causal
    prefill of length L). ``routed`` is the number of (token, expert) assignments
    the GroupedGEMM executes on this rank (default ``tokens * top_k``);
    ``weight_experts`` is how many expert shards it reads (default: every expert
    the assignments can touch).
    """
    if tokens < 1:
        raise ConfigError("tokens must be >= 1")
    if mean_seq_len < 1:
        raise ConfigError("mean_seq_len must be >= 1")
    m = model
    h, wb, act = m.hidden_dim, m.weight_bytes_per_param, m.act_bytes
    if routed is None:
        routed = tokens * m.top_k
    if weight_experts is None:
        weight_experts = min(m.num_experts, routed)
    if routed < 0 or weight_experts < 0:
        raise ConfigError("routed and weight_experts must be >= 0")

    others_half = 0.5 * m.others_bytes_factor * h * act
    attn_flops = 2 * tokens * m.attn_proj_params + m.attn_score_scale * 2 * tokens * mean_seq_len * h
    attn_bytes = m.attn_proj_params * wb + 4 * tokens * h * act + 2 * tokens * m.kv_bytes_per_token_per_layer
    attn = [LayerOp("Attention", attn_flops, attn_bytes)]
    if others_half > 0:
        attn.append(LayerOp("Others", 0.0, others_half * tokens))

    # shared expert and router gate share the DenseGEMM row
    dense_params = 3 * h * m.shared_ffn_dim + h * m.num_experts
    moe = [LayerOp("DenseGEMM", m.dense_flop_scale * 2 * tokens * dense_params,
                   dense_params * wb + 2 * tokens * h * act)]
    if routed > 0:
        grouped_flops = 2 * routed * 3 * h * m.expert_ffn_dim
        grouped_bytes = m.grouped_bytes_scale * (weight_experts * expert_shard_bytes(m) + 2 * routed * h * act)
        moe.append(LayerOp("GroupedGEMM", grouped_flops, grouped_bytes))
        if others_half > 0:
            moe.append(LayerOp("Others", 0.0, others_half * routed / m.top_k))
    return LayerWork(tuple(attn), tuple(moe))
