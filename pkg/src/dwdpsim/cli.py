"""Command-line front end: ``dwdpsim {analytic,simulate,contention,placement,plan}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from . import plotting
from .config import SWEEP_AXES, SweepSpec, build_config, config_hash, default_config, load_config
from .contention import contention_mc, contention_pmf
from .errors import ConfigError, InvariantViolation
from .experiments import analytic_point, placement_for, point_workload, simulate_point, sync_share
from .placement import build_placement, prefetch_bytes
from .sim import breakdown, compare_reports
from .sim.strategies import layer_copy_plan
from .workload import batches_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
ANALYTIC_AXES = ("isl", "mnt", "group_size")


class UsageError(ConfigError):
    pass


def _table(header, rows, fmt):
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _run_dir(base, cmd, digest):
    """Fresh directory ``<base>/<cmd>-<hash12>``; never reuses an existing one."""
    root = Path(base)
    path = root / f"{cmd}-{digest[:12]}"
    k = 1
    while path.exists():
        path = root / f"{cmd}-{digest[:12]}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def _manifest(out, cmd, digest, raw, extra=None):
    data = {"command": cmd, "config_hash": digest, "config": raw}
    data.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(data, indent=1, sort_keys=True, default=str) + "\n")


def _fmt(x, nd=4):
    return f"{x:.{nd}f}"


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    raw = dict(cfg.raw)
    if args.seed is not None:
        raw.setdefault("workload", {})
        raw["workload"] = dict(raw["workload"], seed=args.seed)
    if getattr(args, "axis", None) is not None or getattr(args, "values", None) is not None:
        sweep = dict(raw.get("sweep") or {})
        if args.axis is not None:
            sweep["axis"] = args.axis
        if args.values is not None:
            sweep["values"] = args.values
        raw["sweep"] = sweep
    if args.out is not None:
        raw["output"] = dict(raw.get("output") or {}, dir=args.out)
    if args.format is not None:
        raw["output"] = dict(raw.get("output") or {}, format=args.format)
    return build_config(raw)


# -- subcommands -------------------------------------------------------------

def cmd_analytic(args):
    cfg = _config(args)
    sweep = cfg.sweep
    if sweep is None:
        raise UsageError(f"analytic needs a sweep; valid axes: {', '.join(ANALYTIC_AXES)}", "sweep")
    if sweep.axis not in ANALYTIC_AXES:
        raise UsageError(f"invalid axis {sweep.axis!r}; valid axes: {', '.join(ANALYTIC_AXES)}",
                         "sweep.axis")
    rows = []
    for v in sweep.values:
        res = analytic_point(cfg, sweep.axis, v)
        ratio = "inf" if res.saturated else _fmt(res.ratio)
        rows.append((v, ratio, _fmt(res.speedup), _fmt(res.t_compute * 1e6, 2),
                     _fmt(res.t_prefetch * 1e6, 2), _fmt(res.t_all2all * 1e6, 2)))
    header = (sweep.axis, "ratio", "speedup", "t_compute_us", "t_prefetch_us", "t_all2all_us")
    digest = cfg.config_hash()
    out = _run_dir(cfg.out_dir, "analytic", digest)
    ext = cfg.fmt
    (out / f"analytic.{ext}").write_text(_table(header, rows, ext))
    plotting.plot_analytic([(r[0], float(r[1]), float(r[2])) for r in rows], sweep.axis,
                           out / "analytic.png")
    _manifest(out, "analytic", digest, cfg.raw)
    sys.stdout.write(_table(header, rows, ext))
    print(f"# wrote {out}", file=sys.stderr)
    return EXIT_OK


def _write_point(out, cfg, batches, report, base):
    out.mkdir(parents=True, exist_ok=False)
    (out / "batches.csv").write_text(batches_to_csv(batches))
    runs = [("", report)] + ([("baseline_", base)] if base is not None else [])
    tables = {}
    for prefix, rep in runs:
        (out / f"{prefix}report.json").write_text(rep.to_json() + "\n")
        (out / f"{prefix}trace.json").write_text(rep.chrome_trace() + "\n")
        bd = breakdown(rep)
        tables[rep.config["strategy"]["kind"] + ("" if not prefix else " (baseline)")] = bd
        (out / f"{prefix}breakdown.csv").write_text(bd.to_csv())
    if base is not None:
        cmp = compare_reports(base, report)
        (out / "comparison.csv").write_text(cmp.to_csv(breakdown(base), breakdown(report)))
    plotting.plot_breakdown(tables, out / "breakdown.png")
    plotting.plot_timeline(report, out / "timeline.png")


def cmd_simulate(args):
    cfg = _config(args)
    digest = cfg.config_hash()
    out = _run_dir(cfg.out_dir, "simulate", digest)
    points = [(None, None)] if cfg.sweep is None else [(cfg.sweep.axis, v) for v in cfg.sweep.values]
    header = ("axis", "value", "strategy", "latency_us", "throughput_tps_gpu", "syncwait_share",
              "baseline", "speedup_vs_baseline", "overall_delta")
    rows = []
    for i, (axis, value) in enumerate(points):
        batches, rep, base = simulate_point(cfg, axis, value)
        sub = out / "run" if axis is None else out / f"point-{i:02d}-{axis}-{value:g}"
        _write_point(sub, cfg, batches, rep, base)
        label = point_workload(cfg, axis, value)[1].label()
        row = [axis or "", "" if value is None else f"{value:g}", label,
               _fmt(rep.mean_latency() * 1e6, 2), _fmt(rep.throughput(), 1), _fmt(sync_share(rep))]
        if base is not None:
            cmp = compare_reports(base, rep)
            row += [cfg.baseline.label(), _fmt(rep.throughput() / base.throughput()), _fmt(cmp.overall)]
        else:
            row += ["", "", ""]
        rows.append(tuple(row))
    ext = cfg.fmt
    (out / f"summary.{ext}").write_text(_table(header, rows, ext))
    if cfg.sweep is not None and len(rows) > 1:
        plotting.plot_sweep([(float(r[1]), float(r[4])) for r in rows], cfg.sweep.axis,
                            out / "summary.png")
        plotting.plot_sweep([(float(r[1]), float(r[5])) for r in rows], cfg.sweep.axis,
                            out / "syncwait.png", "SyncWait share of latency")
    _manifest(out, "simulate", digest, cfg.raw)
    sys.stdout.write(_table(header, rows, ext))
    if len(points) == 1 and cfg.baseline is not None:
        sys.stdout.write((out / "run" / "comparison.csv").read_text())
    print(f"# wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_contention(args):
    groups = args.groups
    if not groups:
        raise UsageError("need at least one group size", "--groups")
    for n in groups:
        if n < 3:
            raise UsageError(f"group size {n} < 3 has no contention to model", "--groups")
    seed = 0 if args.seed is None else args.seed
    pmfs, rows = [], []
    for n in groups:
        pmf = contention_pmf(n)
        mc = contention_mc(n, args.rounds, seed=seed)
        pmfs.append(pmf)
        for c in sorted(pmf.probs):
            p, q = pmf.probs[c], mc.probs.get(c, 0.0)
            rows.append((n, c, f"{100 * p:.6g}", f"{100 * q:.6g}", f"{100 * abs(p - q):.3g}"))
    header = ("group_size", "c", "closed_form_pct", "monte_carlo_pct", "abs_error_pct")
    fmt = args.format or "csv"
    raw = {"groups": groups, "rounds": args.rounds, "seed": seed}
    digest = config_hash(raw)
    out = _run_dir(args.out or "runs", "contention", digest)
    (out / f"contention.{fmt}").write_text(_table(header, rows, fmt))
    plotting.plot_contention(groups, pmfs, out / "contention.png")
    _manifest(out, "contention", digest, raw)
    sys.stdout.write(_table(header, rows, fmt))
    print(f"# wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_placement(args):
    cfg = _config(args)
    experts = args.experts or cfg.model.num_experts
    group = args.group_size or cfg.strategy.group_size
    extra = cfg.strategy.extra_redundancy if args.extra is None else args.extra
    plan = build_placement(experts, group, extra)
    lines = [plan.describe()]
    if experts == cfg.model.num_experts:
        lines.append(f"prefetch bytes per layer per rank: {prefetch_bytes(plan, cfg.model)}")
    text = "\n".join(lines) + "\n"
    if (args.format or "csv") == "json":
        text = json.dumps({"num_experts": experts, "group_size": group, "local_count": plan.local_count,
                           "redundancy": plan.redundancy,
                           "local_sets": [list(s) for s in plan.local_sets],
                           "fetch_lists": [[list(p) for p in f] for f in plan.fetch_lists]}) + "\n"
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plan(args):
    cfg = _config(args)
    strategy = cfg.strategy
    if args.group_size:
        strategy = dataclasses.replace(strategy, group_size=args.group_size)
    if strategy.group_size < 2:
        raise UsageError("copy plans need group_size >= 2", "strategy.group_size")
    placement = placement_for(cfg.model, strategy)
    if not 0 <= args.rank < strategy.group_size:
        raise UsageError(f"rank must be in [0, {strategy.group_size})", "--rank")
    plan = layer_copy_plan(placement, cfg.model, args.rank, strategy.options)
    if (args.format or "csv") == "json":
        sys.stdout.write(json.dumps([s._asdict() for s in plan.slices]) + "\n")
    else:
        sys.stdout.write(plan.to_csv())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dwdpsim", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (default: bundled profile)")
    common.add_argument("--seed", type=int, help="override workload / Monte Carlo seed")
    common.add_argument("--out", help="output root directory (default: runs)")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    sub = p.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analytic", parents=[common], help="closed-form DEP vs DWDP sweep")
    a.add_argument("--axis", choices=SWEEP_AXES)
    a.add_argument("--values", type=float, nargs="*")
    a.set_defaults(func=cmd_analytic)

    s = sub.add_parser("simulate", parents=[common], help="event-level simulation")
    s.add_argument("--axis", choices=SWEEP_AXES)
    s.add_argument("--values", type=float, nargs="*")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("contention", parents=[common], help="contention-degree table")
    c.add_argument("--groups", type=int, nargs="*", default=[3, 4, 6, 8, 12, 16])
    c.add_argument("--rounds", type=int, default=1_000_000)
    c.set_defaults(func=cmd_contention)

    pl = sub.add_parser("placement", parents=[common], help="dump an expert placement")
    pl.add_argument("--experts", type=int)
    pl.add_argument("--group-size", type=int)
    pl.add_argument("--extra", type=int)
    pl.set_defaults(func=cmd_placement)

    cp = sub.add_parser("plan", parents=[common], help="dump one rank's per-layer copy plan")
    cp.add_argument("--rank", type=int, default=0)
    cp.add_argument("--group-size", type=int)
    cp.set_defaults(func=cmd_plan)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except BrokenPipeError:  # e.g. piped into head
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
