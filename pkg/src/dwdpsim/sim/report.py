"""Timeline events, run reports, category breakdowns and report comparison."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from ..errors import InvariantViolation

COMPUTE_STREAM = "compute"
COPY_STREAM = "copy_engine"
STREAMS = (COMPUTE_STREAM, COPY_STREAM)
CATEGORIES = ("Attention", "GroupedGEMM", "DenseGEMM", "Others", "Communication",
              "D2DCopy", "P2PCopy", "SyncWait")
# row labels of the latency breakdown table
ROW_LABELS = {
    "Attention": "Attention",
    "GroupedGEMM": "GroupedGEMM",
    "DenseGEMM": "DenseGEMM",
    "Others": "Others",
    "Communication": "Communication",
    "D2DCopy": "D2D Copy",
    "P2PCopy": "P2P Copy",
    "SyncWait": "Synchronization Cost",
}
WEIGHT_WAIT = "weight_wait"


@dataclass(frozen=True)
class SimEvent:
    rank: int
    stream: str
    category: str
    start_ns: int
    end_ns: int
    layer: int
    iteration: int = 0
    label: str = ""
    nbytes: float = 0.0

    def __post_init__(self):
        if self.end_ns < self.start_ns:
            raise InvariantViolation(f"event ends before it starts: {self}")
        if self.stream not in STREAMS:
            raise InvariantViolation(f"unknown stream {self.stream!r}")
        if self.category not in CATEGORIES:
            raise InvariantViolation(f"unknown category {self.category!r}")

    @property
    def start(self):
        return self.start_ns * 1e-9

    @property
    def end(self):
        return self.end_ns * 1e-9

    @property
    def duration(self):
        return (self.end_ns - self.start_ns) * 1e-9

    def to_dict(self):
        return {"rank": self.rank, "stream": self.stream, "category": self.category,
                "start_ns": self.start_ns, "end_ns": self.end_ns, "layer": self.layer,
                "iteration": self.iteration, "label": self.label, "nbytes": self.nbytes}


@dataclass
class RunReport:
    """Events of one run plus per-rank iteration windows ``[(start_ns, end_ns), ...]``.

    Iterations before ``warmup`` are excluded from latency, throughput and
    breakdown statistics.
    """

    strategy: str
    num_ranks: int
    events: list
    iter_windows: list  # per rank
    tokens: list  # per iteration, per rank
    warmup: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n_iter = len(self.tokens)
        if n_iter and not 0 <= self.warmup < n_iter:
            raise InvariantViolation(f"warmup {self.warmup} leaves no measured iteration of {n_iter}")

    @property
    def measured(self):
        return range(self.warmup, len(self.tokens))

    def iteration_latency(self, rank=None):
        """Mean measured iteration latency in seconds, for one rank or per rank."""
        if rank is None:
            return [self.iteration_latency(r) for r in range(self.num_ranks)]
        wins = [self.iter_windows[rank][i] for i in self.measured]
        if not wins:
            return 0.0
        return sum(e - s for s, e in wins) / len(wins) * 1e-9

    def mean_latency(self):
        lat = self.iteration_latency()
        return sum(lat) / len(lat) if lat else 0.0

    def throughput(self):
        """Tokens per second per GPU over the measured window, averaged over ranks."""
        rates = []
        for rank in range(self.num_ranks):
            its = list(self.measured)
            if not its:
                continue
            span = self.iter_windows[rank][its[-1]][1] - self.iter_windows[rank][its[0]][0]
            toks = sum(self.tokens[i][rank] for i in its)
            rates.append(toks / (span * 1e-9) if span > 0 else 0.0)
        return sum(rates) / len(rates) if rates else 0.0

    def measured_events(self):
        keep = set(self.measured)
        return [e for e in self.events if e.iteration in keep]

    def check(self):
        """Assert per-(rank, stream) exclusivity; returns self."""
        lanes = {}
        for e in self.events:
            lanes.setdefault((e.rank, e.stream), []).append(e)
        for key, evs in lanes.items():
            evs.sort(key=lambda e: (e.start_ns, e.end_ns))
            for a, b in zip(evs, evs[1:]):
                if b.start_ns < a.end_ns:
                    raise InvariantViolation(f"overlapping events on {key}: {a} / {b}")
        return self

    def to_json(self):
        return json.dumps({
            "strategy": self.strategy,
            "num_ranks": self.num_ranks,
            "warmup": self.warmup,
            "config": self.config,
            "iteration_latency_s": self.iteration_latency(),
            "throughput_tokens_per_s_per_gpu": self.throughput(),
            "iter_windows_ns": self.iter_windows,
            "tokens": self.tokens,
            "events": [e.to_dict() for e in self.events],
        }, indent=1, sort_keys=True)

    def chrome_trace(self):
        """Trace-viewer JSON array; one complete ("X") event per timeline event."""
        out = []
        for e in self.events:
            out.append({"name": e.label or e.category, "cat": e.category, "ph": "X",
                        "ts": e.start_ns / 1000.0, "dur": (e.end_ns - e.start_ns) / 1000.0,
                        "pid": e.rank, "tid": e.stream,
                        "args": {"layer": e.layer, "iteration": e.iteration, "bytes": e.nbytes}})
        return json.dumps(out)


@dataclass(frozen=True)
class Breakdown:
    """Per-category time in µs per iteration (averaged over ranks) and the latency."""

    values: dict
    latency_us: float
    p2p_overlapped: bool = True

    def __getitem__(self, category):
        return self.values.get(category, 0.0)

    @classmethod
    def from_rows(cls, rows, latency_us, p2p_overlapped=True):
        """Build from a mapping keyed by category or by table row label."""
        by_label = {v: k for k, v in ROW_LABELS.items()}
        vals = {c: 0.0 for c in CATEGORIES}
        for k, v in rows.items():
            cat = k if k in vals else by_label.get(k)
            if cat is None:
                raise KeyError(f"unknown breakdown row {k!r}")
            vals[cat] = float(v)
        return cls(vals, float(latency_us), p2p_overlapped)

    def compute_stream_total(self):
        return sum(v for k, v in self.values.items() if k != "P2PCopy")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "stream", "time_us", "critical_path"])
        for cat in CATEGORIES:
            stream = COPY_STREAM if cat == "P2PCopy" else COMPUTE_STREAM
            crit = "no" if cat == "P2PCopy" and self.p2p_overlapped else "yes"
            w.writerow([ROW_LABELS[cat], stream, f"{self[cat]:.2f}", crit])
        w.writerow(["Iteration Latency", "", f"{self.latency_us:.2f}", "yes"])
        return buf.getvalue()


def breakdown(report):
    """Average per-iteration category times over ranks and measured iterations."""
    vals = {c: 0.0 for c in CATEGORIES}
    if report is None or not report.tokens or report.num_ranks == 0:
        return Breakdown(vals, 0.0, True)
    n_iter = len(report.measured)
    denom = report.num_ranks * n_iter
    exposed_wait = 0
    for e in report.measured_events():
        vals[e.category] += (e.end_ns - e.start_ns) / 1000.0
        if e.label == WEIGHT_WAIT:
            exposed_wait += e.end_ns - e.start_ns
    vals = {k: v / denom for k, v in vals.items()}
    latency_us = report.mean_latency() * 1e6
    # prefetch is off the critical path when no compute stream ever waited on weights
    return Breakdown(vals, latency_us, exposed_wait == 0)


def _as_breakdown(x):
    return x if isinstance(x, Breakdown) else breakdown(x)


@dataclass(frozen=True)
class Comparison:
    deltas: dict  # category -> fraction of a's latency
    overall: float
    gross_sync_comm: float
    off_critical: frozenset = frozenset()

    def pct(self, cat, decimals=2):
        return round(100 * self.deltas[cat], decimals)

    def gross_pct(self, decimals=2):
        """Gross sync+comm removal as a sum of the rounded per-row percentages.

        This is how a breakdown table adds up; it can differ from
        ``round(100 * gross_sync_comm, decimals)`` in the last digit.
        """
        return round(self.pct("Communication", decimals) + self.pct("SyncWait", decimals), decimals)

    def to_csv(self, a=None, b=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "a_us", "b_us", "delta_pct"])
        for cat in CATEGORIES:
            d = self.deltas[cat]
            w.writerow([ROW_LABELS[cat], f"{a[cat]:.2f}" if a else "", f"{b[cat]:.2f}" if b else "",
                        "--" if cat in self.off_critical else f"{100 * d:.2f}"])
        w.writerow(["Iteration Latency", f"{a.latency_us:.2f}" if a else "",
                    f"{b.latency_us:.2f}" if b else "", f"{100 * self.overall:.2f}"])
        return buf.getvalue()


def compare_reports(a, b):
    """Per-category deltas of ``b`` against baseline ``a``, as fractions of a's latency."""
    a, b = _as_breakdown(a), _as_breakdown(b)
    if a.latency_us <= 0:
        raise ValueError("baseline iteration latency must be > 0")
    lat = a.latency_us
    deltas = {cat: (a[cat] - b[cat]) / lat for cat in CATEGORIES}
    gross = deltas["Communication"] + deltas["SyncWait"]
    off = frozenset({"P2PCopy"}) if a.p2p_overlapped and b.p2p_overlapped else frozenset()
    return Comparison(deltas, (a.latency_us - b.latency_us) / lat, gross, off)
