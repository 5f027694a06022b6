"""Event-level and closed-form DEP / DWDP simulation."""

from .analytic import AnalyticResult, analytic_compare
from .engine import Engine
from .fabric import CopyFabric
from .report import (CATEGORIES, COMPUTE_STREAM, COPY_STREAM, ROW_LABELS, WEIGHT_WAIT, Breakdown,
                     Comparison, RunReport, SimEvent, breakdown, compare_reports)
from .strategies import DwdpOptions, run_dep, run_dwdp, simulate_dep, simulate_dwdp

__all__ = [
    "AnalyticResult", "analytic_compare", "Engine", "CopyFabric", "CATEGORIES", "COMPUTE_STREAM",
    "COPY_STREAM", "ROW_LABELS", "WEIGHT_WAIT", "Breakdown", "Comparison", "RunReport", "SimEvent",
    "breakdown", "compare_reports", "DwdpOptions", "run_dep", "run_dwdp", "simulate_dep",
    "simulate_dwdp",
]
