"""Energy ledger, locality analytics and report quantities.

All energy is kept as integer femtojoules so that totals are exact and
independent of the order in which events are charged.
"""
from __future__ import annotations

import json
import math
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import numpy as np

CATEGORIES = (
    "reram_read", "reram_write", "inmem_mac", "analog_compare", "adc_1bit",
    "onchip_buffer_rw", "qk_pu", "softmax", "v_pu", "bank_to_bank",
)
# coarse groups used by the breakdown plots
MEMORY_CATEGORIES = ("reram_read", "reram_write")
INMEM_CATEGORIES = ("inmem_mac", "analog_compare", "adc_1bit", "bank_to_bank")
REPORT_SCHEMA_VERSION = 1


def pj_to_fj(pj: float) -> int:
    fj = round(pj * 1000)
    if not math.isclose(fj, pj * 1000, rel_tol=0, abs_tol=1e-6):
        raise ValueError(f"{pj} pJ is not a whole number of femtojoules")
    return int(fj)


@dataclass(frozen=True)
class EnergyConstants:
    """Per-event energies (picojoules unless noted)."""

    qk_dot_pj: float = 192.56           # one 64-tap 8-bit dot product (QK-PU and V-PU)
    buffer_access_pj: float = 256.0     # 4 banks x 128-bit K/V buffer access
    softmax_pj: float = 89.8            # 2 LUT reads + multiply + divide, per element
    analog_cmp_128col_pj: float = 5.34  # comparators of one 128-column array
    inmem_tile_pj: float = 833.6        # one 64x128 in-memory activation
    inmem_mac_pj: float = 0.10          # per-MAC figure incl. DAC; informational only
    reram_read_pj_per_bit: float = 3.1
    reram_write_pj_per_bit: float = 24.4
    reram_read_512b_pj: float = 1587.2
    reram_write_512b_pj: float = 12492.8
    comparator_fj: int = 41             # one 1-bit ADC / comparator sample
    bank_to_bank_fj_per_bit: int = 10   # intra-memory query copy

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"energy constant {f.name} is negative")
        if 512 * pj_to_fj(self.reram_read_pj_per_bit) != pj_to_fj(self.reram_read_512b_pj):
            raise ValueError("512 x read energy per bit disagrees with the 512-bit read aggregate")
        if 512 * pj_to_fj(self.reram_write_pj_per_bit) != pj_to_fj(self.reram_write_512b_pj):
            raise ValueError("512 x write energy per bit disagrees with the 512-bit write aggregate")

    def fj(self, name: str) -> int:
        if name.endswith("_fj") or name.endswith("_fj_per_bit"):
            return int(getattr(self, name))
        return pj_to_fj(getattr(self, name))


class EnergyLedger:
    """Integer femtojoule counters keyed by (category, channel).

    ``channel`` is ``None`` for on-chip events.  Charging is guarded by a lock,
    and ledgers built on separate threads can be merged; either way the totals
    do not depend on interleaving.
    """

    def __init__(self):
        self._fj = defaultdict(int)
        self._events = defaultdict(int)
        self._lock = threading.Lock()

    def charge(self, category: str, fj: int, count: int = 1, channel: int | None = None):
        if category not in CATEGORIES:
            raise KeyError(f"unknown energy category {category!r}")
        fj, count = int(fj), int(count)
        if fj < 0 or count < 0:
            raise ValueError("energy charges must be non-negative")
        if count == 0:
            return
        key = (category, None if channel is None else int(channel))
        with self._lock:
            self._fj[key] += fj * count
            self._events[key] += count

    def charge_channels(self, category: str, fj: int, counts):
        """Charge ``counts[c]`` events of ``fj`` each to channel ``c``."""
        for c, n in enumerate(np.asarray(counts, dtype=np.int64).tolist()):
            self.charge(category, fj, n, channel=c)

    def merge(self, other: "EnergyLedger"):
        with other._lock:
            items = list(other._fj.items()), list(other._events.items())
        with self._lock:
            for k, v in items[0]:
                self._fj[k] += v
            for k, v in items[1]:
                self._events[k] += v

    def total(self, category: str | None = None) -> int:
        if category is None:
            return sum(self._fj.values())
        return sum(v for (c, _), v in self._fj.items() if c == category)

    def events(self, category: str) -> int:
        return sum(v for (c, _), v in self._events.items() if c == category)

    def by_category(self) -> dict:
        return {c: self.total(c) for c in CATEGORIES}

    def by_channel(self, category: str | None = None) -> dict:
        out = defaultdict(int)
        for (c, ch), v in self._fj.items():
            if ch is not None and (category is None or c == category):
                out[ch] += v
        return dict(sorted(out.items()))


# ---------------------------------------------------------------- locality analytics

def overlap_distribution(S: int, M: int) -> list:
    """P(L) for L = 0..M: overlap of two independent uniform M-subsets of S items."""
    if not 0 <= M <= S:
        raise ValueError(f"need 0 <= M <= S, got S={S}, M={M}")
    denom = math.comb(S, M)
    return [Fraction(math.comb(M, L) * math.comb(S - M, M - L), denom) for L in range(M + 1)]


def expected_overlap_exact(S: int, M: int) -> Fraction:
    return sum((L * p for L, p in enumerate(overlap_distribution(S, M))), Fraction(0))


def expected_overlap(S: int, M: int) -> float:
    return float(expected_overlap_exact(S, M))


def overlap_variance_exact(S: int, M: int) -> Fraction:
    dist = overlap_distribution(S, M)
    mean = sum((L * p for L, p in enumerate(dist)), Fraction(0))
    return sum(((L - mean) ** 2 * p for L, p in enumerate(dist)), Fraction(0))


@dataclass(frozen=True)
class OverlapStats:
    mean: float
    fraction: float
    mean_unpruned: float


def empirical_overlap(prune_vectors) -> OverlapStats:
    """Mean |unpruned(t) & unpruned(t+1)| over adjacent pairs, also as a fraction."""
    P = np.asarray(prune_vectors, dtype=bool)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("need at least two prune vectors")
    U = ~P
    inter = (U[1:] & U[:-1]).sum(axis=1)
    mean = float(inter.mean())
    mu = float(U.sum(axis=1).mean())
    return OverlapStats(mean, mean / mu if mu else 0.0, mu)


def fetch_oracle_count(prune_vectors) -> int:
    """|unpruned(q0)| + sum_t |unpruned(q_t) - unpruned(q_{t-1})|."""
    U = ~np.asarray(prune_vectors, dtype=bool)
    if U.shape[0] == 0:
        return 0
    return int(U[0].sum() + (U[1:] & ~U[:-1]).sum())


# ---------------------------------------------------------------- reports

@dataclass
class PerfReport:
    mode: str
    preset: str
    seq_len: int
    embed: int
    valid_len: int
    cycles_total: int
    energy_by_category: dict
    bytes_fetched: int
    bytes_overhead: int
    fetched_tokens: int
    queries_processed: int
    score_computations: int
    qk_dot_products: int
    v_dot_products: int
    prune_rate: float
    imbalance_ratio: float
    empty_corelet_events: int
    empirical_overlap: float | None
    empirical_overlap_fraction: float | None
    expected_overlap: float | None
    dense_ops: int
    gops_per_s: float
    gops_per_j: float
    settings: dict = field(default_factory=dict)
    bytes_fetched_baseline: int | None = None
    speedup: float | None = None
    energy_reduction: float | None = None
    data_movement_reduction: float | None = None
    undefined_ratios: list = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def energy_total_fj(self) -> int:
        return sum(self.energy_by_category.values())

    def memory_energy_share(self) -> float:
        tot = self.energy_total_fj
        mem = sum(self.energy_by_category[c] for c in MEMORY_CATEGORIES)
        return mem / tot if tot else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["energy_total_fj"] = self.energy_total_fj
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _ratio(num, den):
    if not den:
        return None
    return num / den


@dataclass(frozen=True)
class Comparison:
    speedup: float | None
    energy_reduction: float | None
    data_movement_reduction: float | None
    undefined: tuple = ()


def compare(sprint: PerfReport, baseline: PerfReport) -> Comparison:
    """Baseline-over-SPRINT ratios; a zero denominator yields ``None`` and a flag."""
    vals = {
        "speedup": _ratio(baseline.cycles_total, sprint.cycles_total),
        "energy_reduction": _ratio(baseline.energy_total_fj, sprint.energy_total_fj),
        "data_movement_reduction": _ratio(baseline.bytes_fetched, sprint.bytes_fetched),
    }
    undefined = tuple(k for k, v in vals.items() if v is None)
    return Comparison(undefined=undefined, **vals)


def attach_comparison(report: PerfReport, baseline: PerfReport) -> PerfReport:
    cmp = compare(report, baseline)
    report.bytes_fetched_baseline = baseline.bytes_fetched
    report.speedup = cmp.speedup
    report.energy_reduction = cmp.energy_reduction
    report.data_movement_reduction = cmp.data_movement_reduction
    report.undefined_ratios = list(cmp.undefined)
    return report


def run_baseline(trace, cfg):
    """Iso-resource run without in-memory pruning, SLD controller or 2-D masking."""
    from .engine import run  # engine depends on this module
    from dataclasses import replace
    report, _ = run(trace, replace(cfg, mode="baseline"))
    return report
