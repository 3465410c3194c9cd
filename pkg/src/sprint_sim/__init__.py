"""Architectural simulator for in-ReRAM pruned self-attention."""
from .engine import MODES, PRESETS, SimConfig, config_from_dict, run, run_detailed, run_with_baseline
from .metrics import EnergyConstants, EnergyLedger, PerfReport, compare, expected_overlap
from .workload import AttentionTrace, SyntheticSpec, generate_synthetic, load_trace, save_trace

__all__ = [
    "MODES", "PRESETS", "SimConfig", "config_from_dict", "run", "run_detailed", "run_with_baseline",
    "EnergyConstants", "EnergyLedger", "PerfReport", "compare", "expected_overlap",
    "AttentionTrace", "SyntheticSpec", "generate_synthetic", "load_trace", "save_trace",
]
