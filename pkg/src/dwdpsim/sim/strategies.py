"""DEP and DWDP rank programs, plus their model-driven front ends."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..copyplan import DEFAULT_SLICE_SIZE, Shard, build_copy_plan
from ..errors import ConfigError
from ..modelspec import LayerOp, layer_costs
from .engine import Engine, to_ns
from .fabric import CopyFabric
from .report import RunReport


@dataclass(frozen=True)
class DwdpOptions:
    merge_elim: bool = True
    tdm: bool = True
    slice_size: float = DEFAULT_SLICE_SIZE
    contention: bool = True

    def __post_init__(self):
        if self.tdm and not self.slice_size > 0:
            raise ConfigError("must be > 0 when tdm is on", "strategy.slice_size")


def _cmds(items, layer, it):
    """Expand stage items (LayerOp or ("fixed", category, ns)) into engine commands."""
    for item in items:
        if isinstance(item, LayerOp):
            yield ("op", item.category, item.flops, item.bytes, layer, it)
        else:
            yield ("fixed", item[1], item[2], layer, it)


def _report(strategy, engine, tokens, warmup, config):
    n_iter = len(tokens)
    windows = [[tuple(w[i]) for i in range(n_iter)] for w in engine.windows]
    return RunReport(strategy, engine.n, engine.events, windows, tokens, warmup, config or {}).check()


# -- DEP ---------------------------------------------------------------------

def run_dep(pre, post, comm, num_layers, gpu, tokens=None, warmup=0, config=None):
    """Barrier-synchronized schedule.

    ``pre[it][r]`` / ``post[it][r]`` are stage items before the dispatch
    all-to-all and between dispatch and combine; ``comm[it]`` is
    ``(dispatch_ns, combine_ns)``. Each layer runs
    pre, barrier, dispatch, post, barrier, combine.
    """
    n_iter = len(pre)
    n = len(pre[0]) if n_iter else 0
    if tokens is None:
        tokens = [[0] * n for _ in range(n_iter)]

    def program(rank):
        for it in range(n_iter):
            yield ("begin", it)
            dispatch, combine = comm[it]
            for layer in range(num_layers):
                yield from _cmds(pre[it][rank], layer, it)
                yield ("barrier", (it, layer, 0), layer, it)
                yield ("fixed", "Communication", dispatch, layer, it)
                yield from _cmds(post[it][rank], layer, it)
                yield ("barrier", (it, layer, 1), layer, it)
                yield ("fixed", "Communication", combine, layer, it)
            yield ("end", it)

    engine = Engine(n, gpu)
    engine.run([program(r) for r in range(n)])
    return _report("dep", engine, tokens, warmup, config)


def ep_blocks(num_experts, group_size):
    """Contiguous expert-parallel ownership: rank r owns [r*E/N, (r+1)*E/N)."""
    return [range(r * num_experts // group_size, (r + 1) * num_experts // group_size)
            for r in range(group_size)]


def all2all_bytes(model, tokens):
    """Bytes one rank sends in one all-to-all (dispatch or combine)."""
    return tokens * model.top_k * model.hidden_dim * model.act_bytes


def dep_stages(model, gpu, batch):
    n = batch.num_ranks
    blocks = ep_blocks(model.num_experts, n)
    toks = batch.tokens
    pre, post = [], []
    for r in range(n):
        m = max(1.0, batch.mean_seq_len(r))
        own = layer_costs(model, max(1, toks[r]), m, routed=0)
        pre.append(own.attn + own.moe if toks[r] else ())
        load = int(batch.routed[:, blocks[r].start:blocks[r].stop].sum())
        ep = layer_costs(model, max(1, math.ceil(load / model.top_k)), m, routed=load,
                         weight_experts=len(blocks[r]))
        post.append(tuple(op for op in ep.moe if op.category != "DenseGEMM") if load else ())
    a2a = to_ns(max(all2all_bytes(model, t) for t in toks) / gpu.link_bw)
    return pre, post, (a2a, a2a)


def simulate_dep(model, gpu, interference, batches, group_size=None, warmup=0, config=None):
    """Data + expert parallel baseline over ``batches`` (one RankBatch per iteration).

    DEP has no background copy traffic, so ``interference`` has nothing to act on.
    """
    if not batches:
        raise ConfigError("need at least one iteration", "workload.iterations")
    n = batches[0].num_ranks
    if group_size is not None and group_size != n:
        raise ConfigError(f"batches cover {n} ranks, group_size is {group_size}", "strategy.group_size")
    pre, post, comm = [], [], []
    for b in batches:
        p, q, c = dep_stages(model, gpu, b)
        pre.append(p)
        post.append(q)
        comm.append(c)
    tokens = [list(b.tokens) for b in batches]
    return run_dep(pre, post, comm, model.num_layers, gpu, tokens, warmup, config)


# -- DWDP --------------------------------------------------------------------

def run_dwdp(attn, moe, transfers, num_layers, gpu, interference=None, options=DwdpOptions(),
             d2d_ns=None, tokens=None, warmup=0, config=None):
    """Independent per-rank schedule with layer-ahead weight prefetch.

    ``attn[it][r]`` / ``moe[it][r]`` are stage items; ``transfers[r]`` is the
    ordered (src, nbytes) pull list assembling one layer on rank r.
    """
    n_iter = len(attn)
    n = len(transfers)
    if tokens is None:
        tokens = [[0] * n for _ in range(n_iter)]
    if d2d_ns is None:
        d2d_ns = [0] * n
    fabric = CopyFabric(n, gpu.link_bw, gpu.ce_inflight, tdm=options.tdm, contention=options.contention)

    def program(rank):
        pulls = transfers[rank]
        remote = bool(pulls)
        if remote:
            # warmup epoch: layer 0 of iteration 0
            yield ("prefetch", (rank, 0, 0), pulls, 0, 0)
            yield ("warmup", (rank, 0, 0))
        for it in range(n_iter):
            yield ("begin", it)
            for layer in range(num_layers):
                yield from _cmds(attn[it][rank], layer, it)
                if remote:
                    if it or layer:
                        yield ("await", (rank, it, layer), layer, it)
                    if not options.merge_elim:
                        yield ("fixed", "D2DCopy", d2d_ns[rank], layer, it)
                    if layer + 1 < num_layers:
                        nxt = (rank, it, layer + 1)
                    elif it + 1 < n_iter:
                        nxt = (rank, it + 1, 0)
                    else:
                        nxt = None
                    if nxt is not None:
                        yield ("prefetch", nxt, pulls, nxt[2], nxt[1])
                yield from _cmds(moe[it][rank], layer, it)
            yield ("end", it)

    engine = Engine(n, gpu, interference, fabric)
    engine.run([program(r) for r in range(n)])
    # the warmup epoch must not count toward iteration 0
    return _report("dwdp", engine, tokens, warmup, config)


def layer_shards(plan, model, rank):
    """One shard per (source, parameter) for the experts ``rank`` fetches.

    A source's fetched experts are treated as one run starting at the first
    one's storage slot.
    """
    shards = []
    for param, nbytes in model.param_bytes_per_expert().items():
        for src, experts in plan.source_blocks(rank).items():
            pos = plan.local_sets[src].index(experts[0])
            shards.append(Shard(src, param, int(len(experts) * nbytes), int(pos * nbytes)))
    return shards


def layer_copy_plan(plan, model, rank, options):
    size = options.slice_size if options.tdm else math.inf
    return build_copy_plan(layer_shards(plan, model, rank), size, rank)


def pull_list(plan, model, rank, options):
    """Ordered (src, nbytes) pulls rank ``rank`` issues for one layer."""
    if not plan.fetch_lists[rank]:
        return []
    return [(s.src_rank, s.length) for s in layer_copy_plan(plan, model, rank, options).slices]


def dwdp_stages(model, batch, rank):
    toks = batch.tokens[rank]
    if toks == 0:
        return (), ()
    routed = batch.routed[rank]
    work = layer_costs(model, toks, max(1.0, batch.mean_seq_len(rank)), routed=int(routed.sum()),
                       weight_experts=int(np.count_nonzero(routed)))
    return work.attn, work.moe


def simulate_dwdp(model, gpu, interference, batches, placement, options=DwdpOptions(), warmup=0,
                  config=None):
    if not batches:
        raise ConfigError("need at least one iteration", "workload.iterations")
    n = batches[0].num_ranks
    if placement.group_size != n:
        raise ConfigError(f"placement is for {placement.group_size} ranks, batches cover {n}",
                          "strategy.group_size")
    if placement.num_experts != model.num_experts:
        raise ConfigError("placement does not match model.num_experts", "strategy")
    attn, moe = [], []
    for b in batches:
        stages = [dwdp_stages(model, b, r) for r in range(n)]
        attn.append([s[0] for s in stages])
        moe.append([s[1] for s in stages])
    transfers = [pull_list(placement, model, r, options) for r in range(n)]
    d2d = [to_ns(sum(b for _, b in transfers[r]) / gpu.mem_bw) for r in range(n)]
    tokens = [list(b.tokens) for b in batches]
    return run_dwdp(attn, moe, transfers, model.num_layers, gpu, interference, options, d2d,
                    tokens, warmup, config)
