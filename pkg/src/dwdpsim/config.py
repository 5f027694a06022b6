"""Experiment configuration: YAML file -> validated dataclasses, plus a stable hash."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .copyplan import DEFAULT_SLICE_SIZE
from .errors import ConfigError
from .hwmodel import GpuSpec, InterferenceParams
from .modelspec import MoeModelSpec
from .sim.strategies import DwdpOptions
from .workload import IslDist, WorkloadSpec

DEFAULT_PROFILE = "gb200_r1"
SWEEP_AXES = ("isl", "mnt", "cv", "group_size", "slice_size")
STRATEGY_KINDS = ("dep", "dwdp")


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "dwdp"
    group_size: int = 4
    extra_redundancy: int = 0
    options: DwdpOptions = field(default_factory=DwdpOptions)

    def label(self):
        if self.kind == "dep":
            return f"dep{self.group_size}"
        o = self.options
        tags = [t for t, on in (("tdm", o.tdm), ("merge_elim", o.merge_elim)) if on]
        return f"dwdp{self.group_size}" + "".join("+" + t for t in tags)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    family: str = "normal"  # isl distribution family used by the cv axis


@dataclass(frozen=True)
class ExperimentConfig:
    gpu: GpuSpec
    interference: InterferenceParams
    model: MoeModelSpec
    workload: WorkloadSpec
    strategy: StrategySpec
    baseline: StrategySpec | None = None
    sweep: SweepSpec | None = None
    iterations: int = 6
    warmup: int = 2
    replay: str | None = None
    out_dir: str = "runs"
    fmt: str = "csv"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def config_hash(self):
        return config_hash(self.raw)

    def with_seed(self, seed):
        raw = copy.deepcopy(self.raw)
        raw.setdefault("workload", {})["seed"] = seed
        return build_config(raw)


def config_hash(raw):
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def load_profile(name=DEFAULT_PROFILE):
    try:
        text = resources.files("dwdpsim.profiles").joinpath(f"{name}.yaml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown profile {name!r}", "profile") from None
    return yaml.safe_load(text)


def _num(value, path, kind=float):
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}", path)
    try:
        out = kind(float(value)) if kind is int else kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", path) from None
    if kind is int and out != float(value):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    return out


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", path)
    return value


def _section(raw, name):
    sec = raw.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError("expected a mapping", name)
    return sec


def _fields(cls, data, section, skip=()):
    """Coerce ``data`` into keyword arguments for dataclass ``cls``."""
    hints = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    out = {}
    for key, value in data.items():
        if key not in hints:
            raise ConfigError(f"unknown field (valid: {', '.join(sorted(hints))})", f"{section}.{key}")
        default = hints[key].default
        path = f"{section}.{key}"
        if isinstance(default, bool):
            out[key] = _bool(value, path)
        elif isinstance(default, int) or (default is dataclasses.MISSING and key in _INT_FIELDS):
            out[key] = _num(value, path, int)
        elif isinstance(default, (float,)) or default is dataclasses.MISSING:
            out[key] = _num(value, path)
        else:
            out[key] = value
    return out


_INT_FIELDS = {"num_layers", "hidden_dim", "num_experts", "top_k", "expert_ffn_dim",
               "shared_ffn_dim", "attn_proj_params"}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _strategy(sec, path):
    sec = dict(sec)
    kind = sec.pop("kind", "dwdp")
    if kind not in STRATEGY_KINDS:
        raise ConfigError(f"must be one of {STRATEGY_KINDS}", f"{path}.kind")
    group = _num(sec.pop("group_size", 4), f"{path}.group_size", int)
    if group < 1:
        raise ConfigError("must be >= 1", f"{path}.group_size")
    extra = _num(sec.pop("extra_redundancy", 0), f"{path}.extra_redundancy", int)
    opts = {}
    for key in ("merge_elim", "tdm", "contention"):
        if key in sec:
            opts[key] = _bool(sec.pop(key), f"{path}.{key}")
    if "slice_size" in sec:
        opts["slice_size"] = _num(sec.pop("slice_size"), f"{path}.slice_size")
    if sec:
        raise ConfigError("unknown field", f"{path}.{sorted(sec)[0]}")
    if kind == "dep" and extra:
        raise ConfigError("only meaningful for dwdp", f"{path}.extra_redundancy")
    try:
        options = DwdpOptions(**opts)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"{path}.slice_size") from None
    return StrategySpec(kind, group, extra, options)


def _sweep(sec):
    if not sec:
        return None
    sec = dict(sec)
    axis = sec.pop("axis", None)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"must be one of {', '.join(SWEEP_AXES)}", "sweep.axis")
    values = sec.pop("values", None)
    if not isinstance(values, list) or not values:
        raise ConfigError("must be a non-empty list", "sweep.values")
    kind = float if axis in ("cv", "slice_size") else int
    values = tuple(_num(v, f"sweep.values[{i}]", kind) for i, v in enumerate(values))
    for i, v in enumerate(values):
        bad = (v < 0) if axis == "cv" else (v <= 0)
        if bad:
            raise ConfigError("out of range for axis " + axis, f"sweep.values[{i}]")
    family = sec.pop("family", "normal")
    if family not in ("normal", "uniform_ratio"):
        raise ConfigError("must be normal or uniform_ratio", "sweep.family")
    if sec:
        raise ConfigError("unknown field", f"sweep.{sorted(sec)[0]}")
    return SweepSpec(axis, values, family)


def build_config(raw):
    """Validate a raw mapping (already parsed YAML) into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    known = {"profile", "gpu", "interference", "model", "workload", "strategy", "baseline",
             "sweep", "output"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown section (valid: {', '.join(sorted(known))})", str(key))
    profile = load_profile(raw.get("profile", DEFAULT_PROFILE))
    merged = _merge(profile, {k: raw[k] for k in ("gpu", "interference", "model") if k in raw})

    gpu = GpuSpec(**_fields(GpuSpec, _section(merged, "gpu"), "gpu"))
    isec = dict(_section(merged, "interference"))
    fracs = isec.pop("compute_power_frac", None)
    ikw = _fields(InterferenceParams, isec, "interference", skip=("compute_power_frac",))
    if fracs is not None:
        if not isinstance(fracs, dict):
            raise ConfigError("expected a mapping", "interference.compute_power_frac")
        base = InterferenceParams().compute_power_frac
        ikw["compute_power_frac"] = {**base, **{k: _num(v, f"interference.compute_power_frac.{k}")
                                                for k, v in fracs.items()}}
    interference = InterferenceParams(**ikw)
    model = MoeModelSpec(**_fields(MoeModelSpec, _section(merged, "model"), "model"))

    wsec = dict(_section(raw, "workload"))
    isl_raw = wsec.pop("isl", {}) or {}
    if not isinstance(isl_raw, dict):
        raise ConfigError("expected a mapping", "workload.isl")
    isl = IslDist(**_fields(IslDist, isl_raw, "workload.isl"))
    iterations = _num(wsec.pop("iterations", 6), "workload.iterations", int)
    warmup = _num(wsec.pop("warmup", 2), "workload.warmup", int)
    replay = wsec.pop("replay", None)
    workload = WorkloadSpec(isl, **_fields(WorkloadSpec, wsec, "workload", skip=("isl",)))
    if iterations < 1:
        raise ConfigError("must be >= 1", "workload.iterations")
    if not 0 <= warmup < iterations:
        raise ConfigError("must be in [0, iterations)", "workload.warmup")

    strategy = _strategy(_section(raw, "strategy"), "strategy")
    baseline = _strategy(raw["baseline"], "baseline") if raw.get("baseline") else None
    sweep = _sweep(_section(raw, "sweep"))

    osec = dict(_section(raw, "output"))
    out_dir = str(osec.pop("dir", "runs"))
    fmt = osec.pop("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("must be csv or json", "output.format")
    if osec:
        raise ConfigError("unknown field", f"output.{sorted(osec)[0]}")
    return ExperimentConfig(gpu, interference, model, workload, strategy, baseline, sweep,
                            iterations, warmup, replay, out_dir, fmt, copy.deepcopy(raw))


def load_config(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
    return build_config(raw or {})


def default_config():
    return build_config({})
