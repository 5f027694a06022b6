"""Hardware envelope, roofline operator cost and communication interference models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ConfigError

# Two published calibration points: no throttle at 100% of TDP, 0.798 normalized
# frequency at 114.4% of TDP (short-duration overlap with attention).
THROTTLE_REF_POWER = 1.144
THROTTLE_REF_FREQ = 0.798
DEFAULT_THROTTLE_EXPONENT = math.log(THROTTLE_REF_FREQ) / math.log(1.0 / THROTTLE_REF_POWER)

COMPUTE_CATEGORIES = ("Attention", "GroupedGEMM", "DenseGEMM", "Others")


def _default_power_fracs():
    return {"Attention": 0.967, "GroupedGEMM": 0.85, "DenseGEMM": 0.85, "Others": 0.85}


@dataclass(frozen=True)
class GpuSpec:
    """Per-GPU hardware envelope.

    Rates are in FLOP/s and bytes/s. ``link_bw`` is the peer-to-peer bandwidth one
    rank can use for its own pulls; ``ce_inflight`` is how many small copy slices
    the copy engine keeps in flight at once.
    """

    peak_flops: float = 10e15
    mem_bw: float = 8e12
    link_bw: float = 1.8e12
    ce_inflight: int = 2
    tdp: float = 1.0
    idle_power_frac: float = 0.129

    def __post_init__(self):
        for name in ("peak_flops", "mem_bw", "link_bw", "tdp"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", f"gpu.{name}")
        if int(self.ce_inflight) != self.ce_inflight or self.ce_inflight < 1:
            raise ConfigError("must be an integer >= 1", "gpu.ce_inflight")
        if not 0 <= self.idle_power_frac < 1:
            raise ConfigError("must be in [0, 1)", "gpu.idle_power_frac")


@dataclass(frozen=True)
class InterferenceParams:
    mem_interference_on: bool = True
    power_interference_on: bool = True
    compute_power_frac: Mapping[str, float] = field(default_factory=_default_power_fracs)
    comm_power_frac: float = 0.305
    throttle_exponent: float = DEFAULT_THROTTLE_EXPONENT

    def __post_init__(self):
        for cat, frac in self.compute_power_frac.items():
            if not 0 <= frac <= 2:
                raise ConfigError("must be in [0, 2]", f"interference.compute_power_frac.{cat}")
        if not 0 <= self.comm_power_frac <= 2:
            raise ConfigError("must be in [0, 2]", "interference.comm_power_frac")
        if not self.throttle_exponent > 0:
            raise ConfigError("must be > 0", "interference.throttle_exponent")

    @classmethod
    def disabled(cls):
        return cls(mem_interference_on=False, power_interference_on=False)


def roofline_time(flops, nbytes, gpu):
    """Return ``max(flops / peak_flops, bytes / mem_bw)`` in seconds."""
    if flops < 0 or nbytes < 0:
        raise ValueError(f"negative operator cost: flops={flops}, bytes={nbytes}")
    if flops == 0 and nbytes == 0:
        raise ValueError("operator with zero flops and zero bytes")
    return max(flops / gpu.peak_flops, nbytes / gpu.mem_bw)


def mem_slowdown_factor(comm_rate, gpu):
    """Stretch applied to memory-bound time while ``comm_rate`` bytes/s of link
    traffic also flows through local HBM. Bounded by ``1 + link_bw / mem_bw``."""
    if comm_rate < 0:
        raise ValueError("comm_rate must be >= 0")
    return 1.0 + min(comm_rate, gpu.link_bw) / gpu.mem_bw


def power_throttle_factor(active_power_frac, params):
    """Normalized SM frequency under a power draw of ``active_power_frac`` x TDP.

    1 up to the cap, then ``(1 / p) ** gamma``.
    """
    if active_power_frac < 0:
        raise ValueError("active_power_frac must be >= 0")
    if active_power_frac <= 1.0:
        return 1.0
    return (1.0 / active_power_frac) ** params.throttle_exponent


def overlap_power(category, params, gpu):
    """Estimated power (fraction of TDP) when ``category`` overlaps two-sided
    communication; the idle baseline is counted once."""
    try:
        compute = params.compute_power_frac[category]
    except KeyError:
        raise ConfigError(f"no power fraction for category {category!r}",
                          "interference.compute_power_frac") from None
    return compute + params.comm_power_frac - gpu.idle_power_frac


def calibrate_throttle_exponent(power_frac=THROTTLE_REF_POWER, freq=THROTTLE_REF_FREQ):
    """Exponent of the single power law through ``(power_frac, freq)``."""
    if power_frac <= 1 or not 0 < freq < 1:
        raise ValueError("need power_frac > 1 and 0 < freq < 1")
    return math.log(freq) / math.log(1.0 / power_frac)
