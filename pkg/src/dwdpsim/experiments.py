"""Config-driven runs shared by the command line and the test suites."""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

from .errors import ConfigError
from .placement import build_placement, replicated_placement
from .sim import analytic_compare, breakdown, simulate_dep, simulate_dwdp
from .workload import batches_from_csv, batches_to_csv, sample_batches, workload_for_cv


def placement_for(model, strategy):
    if strategy.group_size == 1:
        return replicated_placement(model.num_experts, 1)
    return build_placement(model.num_experts, strategy.group_size, strategy.extra_redundancy)


def make_batches(cfg, workload=None, group_size=None):
    """Replayed batches when the config names a file, sampled ones otherwise."""
    group_size = group_size or cfg.strategy.group_size
    if cfg.replay:
        try:
            text = Path(cfg.replay).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read replay file: {exc.strerror}", "workload.replay") from None
        batches = batches_from_csv(text)
        if not batches:
            raise ConfigError("replay file holds no batches", "workload.replay")
        if batches[0].num_ranks != group_size:
            raise ConfigError(f"replay covers {batches[0].num_ranks} ranks, strategy needs {group_size}",
                              "workload.replay")
        for b in batches:
            if max(b.tokens) > cfg.workload.max_num_tokens:
                raise ConfigError("replayed batch exceeds max_num_tokens", "workload.replay")
        return batches
    return sample_batches(workload or cfg.workload, cfg.model, group_size, cfg.iterations)


def run_strategy(cfg, strategy, batches, model=None):
    model = model or cfg.model
    warmup = min(cfg.warmup, len(batches) - 1)
    echo = {
        "strategy": dataclasses.asdict(strategy),
        "gpu": dataclasses.asdict(cfg.gpu),
        "interference": dataclasses.asdict(cfg.interference),
        "model": dataclasses.asdict(model),
        "warmup": warmup,
        "batches_sha256": hashlib.sha256(batches_to_csv(batches).encode()).hexdigest(),
    }
    if strategy.kind == "dep":
        return simulate_dep(model, cfg.gpu, cfg.interference, batches, strategy.group_size, warmup, echo)
    return simulate_dwdp(model, cfg.gpu, cfg.interference, batches, placement_for(model, strategy),
                         strategy.options, warmup, echo)


def analytic_point(cfg, axis, value):
    """One analytic evaluation; returns (ratio, speedup, AnalyticResult)."""
    isl = cfg.workload.isl.length
    mnt = cfg.workload.max_num_tokens
    requests = cfg.workload.batch_per_rank
    strategy = cfg.strategy
    if axis == "isl":
        isl = int(value)
    elif axis == "mnt":
        mnt = int(value)
        requests = mnt // isl
    elif axis == "group_size":
        strategy = dataclasses.replace(strategy, group_size=int(value))
    else:
        raise ConfigError(f"axis {axis!r} is not available analytically (use isl, mnt, group_size)",
                          "sweep.axis")
    if isl > mnt or requests < 1:
        raise ConfigError(f"ISL {isl} does not fit max_num_tokens {mnt}", "sweep.values")
    requests = min(requests, mnt // isl)
    if strategy.group_size < 2:
        raise ConfigError("analytic comparison needs group_size >= 2", "sweep.values")
    placement = placement_for(cfg.model, strategy)
    res = analytic_compare(cfg.model, cfg.gpu, placement, requests * isl, (isl + 1) / 2)
    return res


def point_workload(cfg, axis, value):
    """Workload and strategy for one simulate sweep point."""
    w, strategy = cfg.workload, cfg.strategy
    if axis == "isl":
        isl = dataclasses.replace(w.isl, length=int(value),
                                  std=w.isl.std * value / w.isl.length)
        w = dataclasses.replace(w, isl=isl)
    elif axis == "mnt":
        w = dataclasses.replace(w, max_num_tokens=int(value))
    elif axis == "cv":
        family = cfg.sweep.family if cfg.sweep else "normal"
        w = workload_for_cv(w, float(value), family)
    elif axis == "group_size":
        strategy = dataclasses.replace(strategy, group_size=int(value))
    elif axis == "slice_size":
        strategy = dataclasses.replace(strategy, options=dataclasses.replace(strategy.options,
                                                                             slice_size=float(value)))
    elif axis is not None:
        raise ConfigError(f"unknown axis {axis!r}", "sweep.axis")
    return w, strategy


def simulate_point(cfg, axis=None, value=None):
    """Run the strategy (and baseline, if any) on one shared batch sequence.

    Returns (batches, report, baseline_report or None).
    """
    w, strategy = point_workload(cfg, axis, value)
    batches = make_batches(cfg, w, strategy.group_size)
    report = run_strategy(cfg, strategy, batches)
    base = None
    if cfg.baseline is not None:
        bstrat = cfg.baseline
        if axis == "group_size":
            bstrat = dataclasses.replace(bstrat, group_size=int(value))
        if bstrat.group_size != strategy.group_size:
            raise ConfigError("baseline must use the same group_size", "baseline.group_size")
        base = run_strategy(cfg, bstrat, batches)
    return batches, report, base


def sync_share(report):
    b = breakdown(report)
    return b["SyncWait"] / b.latency_us if b.latency_us else 0.0
