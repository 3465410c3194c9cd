"""Per-head simulation: in-memory thresholding, selective fetch, on-chip recompute.

Four modes share one accounting scheme:

* ``sprint``        in-memory pruning, locality-aware fetch, 2-D padding mask;
* ``baseline``      stream every K/V vector per query group, score all s x s;
* ``pruning_only``  baseline fetch and QK, exact on-chip thresholding before softmax;
* ``mask_only``     baseline restricted to the unpadded region.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import memctrl, reram
from .attention_core import DEFAULT_SCORE_SHIFT, reference_attention, score_matrix
from .corelet import (BufferState, CoreletConfig, PipelineState, apply_2d_mask,
                      imbalance_ratio, process_query, query_timing, token_interleave)
from .metrics import (CATEGORIES, EnergyConstants, EnergyLedger, PerfReport, attach_comparison,
                      empirical_overlap, expected_overlap)
from .memctrl import MemorySystem, TimingConfig
from .reram import NoiseModel, ReramLayout

MODES = ("sprint", "baseline", "pruning_only", "mask_only")
PRESETS = {
    #      CORELETs, K/V buffer, Q buffer, index buffer (bytes)
    "S": (1, 16 * 1024, 64, 512),
    "M": (2, 32 * 1024, 128, 1024),
    "L": (4, 64 * 1024, 256, 2048),
}
BUFFER_ACCESS_BITS = 512
GOPS_CONVENTION = "2 ops per MAC; dense s*s*d MACs for each of QK^T and PV"


def preset_corelet(name: str) -> CoreletConfig:
    n, kv, qb, ib = PRESETS[name]
    return CoreletConfig(n_corelets=n, kv_buffer_bytes=kv, q_buffer_bytes=qb, index_buffer_bytes=ib)


@dataclass(frozen=True)
class SimConfig:
    preset: str = "S"
    mode: str = "sprint"
    corelet: CoreletConfig | None = None
    timing: TimingConfig = field(default_factory=TimingConfig)
    energy: EnergyConstants = field(default_factory=EnergyConstants)
    noise: NoiseModel = field(default_factory=NoiseModel)
    layout: ReramLayout | None = None
    overlap_thresholding: bool = True
    score_shift: int = DEFAULT_SCORE_SHIFT
    compute_output: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.preset not in (*PRESETS, "custom"):
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.corelet is None:
            if self.preset == "custom":
                raise ValueError("a custom preset needs an explicit corelet config")
            object.__setattr__(self, "corelet", preset_corelet(self.preset))
        elif self.preset in PRESETS and self.corelet != preset_corelet(self.preset):
            raise ValueError(f"corelet config differs from preset {self.preset}; use preset='custom'")
        channels = self.timing.channels_per_corelet * self.corelet.n_corelets
        if self.layout is None:
            object.__setattr__(self, "layout", ReramLayout(channels=channels))
        elif self.layout.channels != channels:
            raise ValueError(f"layout has {self.layout.channels} channels, configuration implies {channels}")
        if not 0 <= self.score_shift <= 24:
            raise ValueError("score_shift must be in 0..24")

    @property
    def channels(self) -> int:
        return self.layout.channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _sub(cls, base, over, name):
    if over is None:
        return base
    if not isinstance(over, dict):
        raise ValueError(f"config section {name!r} must be an object")
    bad = set(over) - {f.name for f in dataclasses.fields(cls)}
    if bad:
        raise ValueError(f"unknown {name} keys: {sorted(bad)}")
    return replace(base, **over) if base is not None else cls(**over)


def config_from_dict(d: dict, preset: str | None = None, mode: str | None = None) -> SimConfig:
    """SimConfig from a JSON-style dict whose keys mirror the field names 1:1.

    ``preset``/``mode`` arguments (e.g. from command-line flags) override the dict.
    """
    if not isinstance(d, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(d) - {f.name for f in dataclasses.fields(SimConfig)}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    preset = preset or d.get("preset", "S")
    mode = mode or d.get("mode", "sprint")
    if preset not in (*PRESETS, "custom"):
        raise ValueError(f"unknown preset {preset!r}")
    corelet = _sub(CoreletConfig, preset_corelet(preset) if preset in PRESETS else CoreletConfig(),
                   d.get("corelet"), "corelet")
    timing = _sub(TimingConfig, TimingConfig(), d.get("timing"), "timing")
    energy = _sub(EnergyConstants, EnergyConstants(), d.get("energy"), "energy")
    noise = _sub(NoiseModel, NoiseModel(), d.get("noise"), "noise")
    layout = None
    if d.get("layout") is not None:
        lay = dict(d["layout"])
        if isinstance(lay.get("crossbar"), dict):
            lay["crossbar"] = reram.CrossbarSpec(**lay["crossbar"])
        lay.setdefault("channels", timing.channels_per_corelet * corelet.n_corelets)
        layout = _sub(ReramLayout, None, lay, "layout")
    rest = {k: d[k] for k in ("overlap_thresholding", "score_shift", "compute_output") if k in d}
    return SimConfig(preset=preset, mode=mode, corelet=corelet, timing=timing, energy=energy,
                     noise=noise, layout=layout, **rest)


def buffer_fraction_config(cfg: SimConfig, fraction: float, seq_len: int, embed: int) -> SimConfig:
    """Custom variant of ``cfg`` whose K (and V) buffers hold ``fraction`` of the sequence."""
    if not 0 < fraction <= 1:
        raise ValueError("buffer fraction must be in (0, 1]")
    n = cfg.corelet.n_corelets
    per = max(1, math.ceil(fraction * seq_len / n))
    cor = replace(cfg.corelet, kv_buffer_bytes=per * n * 2 * embed)
    return replace(cfg, preset="custom", corelet=cor)


@dataclass
class RunResult:
    report: PerfReport
    attention: np.ndarray
    prune: np.ndarray          # s x s, True = pruned (what the values were computed with)
    active_queries: np.ndarray
    ledger: EnergyLedger
    fetched: np.ndarray        # per-query fetched-token counts
    readp_pairs: list = field(default_factory=list)


class SimulationError(RuntimeError):
    def __init__(self, query: int, phase: str, cause: Exception):
        super().__init__(f"query {query}, phase {phase}: {cause}")
        self.query, self.phase = query, phase


class _Counters:
    """Per-channel event tallies, charged to the ledger once at the end of a run."""

    def __init__(self, channels: int):
        self.ch = {c: np.zeros(channels, dtype=np.int64) for c in ("read_bits", "b2b_bits")}
        self.chip = {c: 0 for c in ("buffer", "qk", "v", "softmax")}

    def charge(self, ledger: EnergyLedger, e: EnergyConstants):
        for c, n in enumerate(self.ch["read_bits"].tolist()):
            ledger.charge("reram_read", e.fj("reram_read_pj_per_bit"), n, channel=c)
        for c, n in enumerate(self.ch["b2b_bits"].tolist()):
            ledger.charge("bank_to_bank", e.fj("bank_to_bank_fj_per_bit"), n, channel=c)
        ledger.charge("onchip_buffer_rw", e.fj("buffer_access_pj"), self.chip["buffer"])
        ledger.charge("qk_pu", e.fj("qk_dot_pj"), self.chip["qk"])
        ledger.charge("v_pu", e.fj("qk_dot_pj"), self.chip["v"])
        ledger.charge("softmax", e.fj("softmax_pj"), self.chip["softmax"])


def _vec_row(idx, channels, vpr):
    return (np.asarray(idx) // channels) // vpr


def _sprint(trace, cfg: SimConfig, led: EnergyLedger):
    s, d, n = trace.seq_len, trace.embed, trace.valid_len
    lay, tm, e, cc = cfg.layout, cfg.timing, cfg.energy, cfg.corelet
    C, B, vpr = lay.channels, lay.banks_per_channel, lay.vectors_per_row
    Q, K, V = trace.q_matrix, trace.k_matrix, trace.v_matrix
    cnt = _Counters(C)
    out = np.zeros((s, d), dtype=np.int16)
    prune = np.ones((s, s), dtype=bool)
    fetched_counts = np.zeros(s, dtype=np.int64)
    mask = apply_2d_mask(trace)

    # store phase: only the unpadded rows are written
    stored = reram.store_keys(K[:n], lay, led, e) if n else None
    reram.charge_row_writes(led, n, d, C, e)   # Q
    reram.charge_row_writes(led, n, d, C, e)   # V
    if n == 0:
        return out, prune, mask, cnt, fetched_counts, None, {}, []

    # in-memory thresholding for every valid query (values only; timing below)
    q_msb = reram.split_msb_lsb(Q[:n])[0]
    exact_msb = reram.msb_scores(q_msb, stored.msb)
    calib = reram.calibration_range(exact_msb)
    approx = reram.inmem_score_matrix(q_msb, stored, cfg.noise, calib, led)
    th_m = reram.msb_threshold(trace.threshold, lay.msb_bits)
    P = approx < th_m
    led.charge_channels("analog_compare", e.fj("analog_cmp_128col_pj"), lay.tiles_used(n, d) * n)
    led.charge_channels("adc_1bit", e.fj("comparator_fj"), lay.columns_used(n, d) * n)
    prune[:n, :n] = P

    ch_of, bank_of, _ = lay.placement(n, d)
    keys_per_ch_bank = np.zeros((C, B), dtype=np.int64)
    np.add.at(keys_per_ch_bank, (ch_of, bank_of), 1)
    banks_used = max(1, int((keys_per_ch_bank[0] > 0).sum()))
    readp_beats = np.maximum(1, -(-keys_per_ch_bank[:, :banks_used] // tm.channel_width_bits))
    readp_bits = np.bincount(ch_of, minlength=C)
    copy_beats = tm.beats(d * lay.msb_bits)
    kmsb_beats, klsb_beats = tm.beats(d * lay.msb_bits), tm.beats(d * (8 - lay.msb_bits))
    vec_beats = tm.beats(8 * d)
    acc = math.ceil(8 * d / BUFFER_ACCESS_BITS)
    bank_q, bank_k, bank_v = B, B + 1, B + 2

    mem = MemorySystem(C, B + 3, tm)
    cap = cc.capacity_per_corelet(d)
    mapping = token_interleave(n, cc.n_corelets)
    buf = BufferState(n, mapping, cap)
    pipe = PipelineState()
    all_ch = np.arange(C)
    k_done = np.zeros(n, dtype=np.int64)
    v_done = np.zeros(n, dtype=np.int64)
    overhead = 0

    for t in range(n):
        phase = "thresholding"
        try:
            # the next thresholding may run under the previous query's V-PU phase
            gate = pipe.softmax_end if cfg.overlap_thresholding else pipe.vpu_end
            _, rp_done = mem.copyq_readp(gate, copy_beats, readp_beats)
            cnt.ch["b2b_bits"] += d * lay.msb_bits
            cnt.ch["read_bits"] += readp_bits
            overhead += C * d * lay.msb_bits // 8 + math.ceil(n / 8)
            ready = int(rp_done.max())

            phase = "sld"
            if t == 0:
                mem_req, loc = memctrl.first_query_bootstrap(P[0])
            else:
                mem_req, loc = memctrl.sld_compute(P[t - 1], P[t])
            fetch = buf.fetch_set(mem_req, loc)
            toks = np.concatenate(memctrl.generate_requests(fetch, C)) if fetch.any() else \
                np.zeros(0, dtype=np.int64)
            toks.sort()

            phase = "fetch"
            qc = t % C
            q_done = mem.read_batch([qc], [bank_q], [_vec_row(t, C, vpr)], [vec_beats], ready)[0]
            cnt.ch["read_bits"][qc] += 8 * d
            if toks.size:
                m = toks.size
                ch3 = np.repeat(ch_of[toks], 3)
                bk3 = np.stack([bank_of[toks], np.full(m, bank_k), np.full(m, bank_v)], 1).ravel()
                rw3 = np.repeat(_vec_row(toks, C, vpr), 3)
                bu3 = np.tile([kmsb_beats, klsb_beats, vec_beats], m)
                done = mem.read_batch(ch3, bk3, rw3, bu3, ready).reshape(m, 3)
                k_done[toks] = done[:, :2].max(axis=1)
                v_done[toks] = done[:, 2]
                np.add.at(cnt.ch["read_bits"], ch_of[toks], 16 * d)
            fetched_counts[t] = toks.size

            phase = "compute"
            res = process_query(Q[t], K[:n], V[:n], P[t], buf, mem_req, loc, (k_done, v_done),
                                max(ready, int(q_done)), pipe, cc, cfg.score_shift,
                                compute_row=cfg.compute_output)
            if res.fetched.sum() != toks.size:
                raise RuntimeError("fetched set disagrees with issued requests")
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise SimulationError(t, phase, exc) from exc
        pipe = res.timing.state()
        u = int((~P[t]).sum())
        cnt.chip["buffer"] += (2 * toks.size + 2 * u) * acc
        cnt.chip["qk"] += u * cc.cycles_per_vector(d)
        cnt.chip["v"] += u * cc.cycles_per_vector(d)
        cnt.chip["softmax"] += u
        if res.row is not None:
            out[t] = res.row.output

    info = {"calibration_range": list(calib), "threshold_msb": th_m, "evictions": buf.evictions,
            "buffer_capacity_per_corelet": cap, "bytes_overhead": overhead,
            "cycles": max(pipe.vpu_end, int(mem.last_done.max()))}
    imb = imbalance_ratio(P, mapping, cc.n_corelets)
    return out, prune, mask, cnt, fetched_counts, imb, info, mem.readp_after_copyq


def _streaming(trace, cfg: SimConfig, led: EnergyLedger):
    """baseline / pruning_only / mask_only: K and V stream through an LRU per query group."""
    s, d, n = trace.seq_len, trace.embed, trace.valid_len
    lay, tm, e, cc = cfg.layout, cfg.timing, cfg.energy, cfg.corelet
    C, vpr = lay.channels, lay.vectors_per_row
    Q, K, V = trace.q_matrix, trace.k_matrix, trace.v_matrix
    masked = cfg.mode == "mask_only"
    span = n if masked else s
    mask = apply_2d_mask(trace, enabled=masked)
    cnt = _Counters(C)
    out = np.zeros((s, d), dtype=np.int16)
    prune = np.zeros((s, s), dtype=bool)
    prune[:, span:] = True
    fetched_counts = np.zeros(s, dtype=np.int64)
    for _ in range(3):
        reram.charge_row_writes(led, span, d, C, e)
    info = {"cycles": 0, "bytes_overhead": 0}
    if span == 0:
        return out, prune, mask, cnt, fetched_counts, None, info, []

    if cfg.mode == "pruning_only":
        S = score_matrix(Q, K)
        prune = S < trace.threshold
    g = max(1, cc.q_buffer_bytes // d)
    cap = cc.capacity_per_corelet(d)
    mapping = token_interleave(span, cc.n_corelets)
    ch_of = np.arange(span) % C
    rows = _vec_row(np.arange(span), C, vpr)
    vec_beats = tm.beats(8 * d)
    acc = math.ceil(8 * d / BUFFER_ACCESS_BITS)
    cpv = cc.cycles_per_vector(d)
    bank_q, bank_k, bank_v = lay.banks_per_channel, lay.banks_per_channel + 1, lay.banks_per_channel + 2
    mem = MemorySystem(C, lay.banks_per_channel + 3, tm)
    k_res = np.zeros(span, dtype=bool)
    v_res = np.zeros(span, dtype=bool)
    pipe = PipelineState()
    fwd = np.arange(span)

    def lru_step(resident, needed_order):
        fetch = needed_order[~resident[needed_order]]
        new = np.zeros_like(resident)
        for c in range(cc.n_corelets):
            mine = needed_order[mapping[needed_order] == c]
            new[mine[-cap:] if cap > 0 else mine[:0]] = True
        return fetch, new

    for gi, q0 in enumerate(range(0, span, g)):
        qs = np.arange(q0, min(q0 + g, span))
        try:
            order = fwd if gi % 2 == 0 else fwd[::-1]
            kf, k_res = lru_step(k_res, order)
            if cfg.mode == "pruning_only":
                vneed = ~prune[qs][:, :span]
                vord = order[vneed.any(axis=0)[order]]
                # per value vector: number of queries in the group that keep it
                vcost = vneed.sum(axis=0)[vord] * cpv
                sm_items = vneed.sum(axis=0)
            else:
                vord = order
                vcost = np.full(span, len(qs) * cpv)
                sm_items = np.full(span, len(qs))
            vf, v_res = lru_step(v_res, vord)

            issue = pipe.qk_end
            qd = mem.read_batch(qs % C, np.full(len(qs), bank_q), _vec_row(qs, C, vpr),
                                vec_beats, issue)
            ready = int(qd.max())
            np.add.at(cnt.ch["read_bits"], qs % C, 8 * d)
            # K stream first, then V, each in the group's processing order
            cmd_tok = np.r_[kf, vf]
            cmd_bank = np.r_[np.full(kf.size, bank_k), np.full(vf.size, bank_v)]
            done = mem.read_batch(ch_of[cmd_tok], cmd_bank, rows[cmd_tok], vec_beats, issue)
            k_av = np.full(span, issue, dtype=np.int64)
            v_av = np.full(span, issue, dtype=np.int64)
            k_av[kf] = done[:kf.size]
            v_av[vf] = done[kf.size:]
            np.add.at(cnt.ch["read_bits"], ch_of[cmd_tok], 8 * d)
            fetched_counts[qs[0]] = kf.size
            sm_counts = np.bincount(mapping, weights=sm_items, minlength=cc.n_corelets).astype(np.int64)
            tim = query_timing(order, k_av[order], len(qs) * cpv, vord, v_av[vord],
                               vcost if cfg.mode == "pruning_only" else vcost[vord],
                               sm_counts, ready, pipe, cc, mapping)
        except Exception as exc:  # noqa: BLE001
            raise SimulationError(int(qs[0]), "stream", exc) from exc
        pipe = tim.state()
        cnt.chip["buffer"] += (kf.size + vf.size + span + vord.size) * acc
        cnt.chip["qk"] += span * len(qs) * cpv
        cnt.chip["v"] += int(vcost.sum()) if cfg.mode == "pruning_only" else span * len(qs) * cpv
        cnt.chip["softmax"] += int(sm_items.sum())

    if cfg.compute_output:
        active = mask.queries if masked else np.ones(s, dtype=bool)
        out, _ = reference_attention(Q, K, V, prune, active, cfg.score_shift)
    info["cycles"] = max(pipe.vpu_end, int(mem.last_done.max()))
    P_eff = prune[:span, :span] if cfg.mode == "pruning_only" else None
    imb = imbalance_ratio(P_eff if P_eff is not None else np.zeros((1, span), bool),
                          mapping, cc.n_corelets)
    return out, prune, mask, cnt, fetched_counts, imb, info, []


def run_detailed(trace, cfg: SimConfig) -> RunResult:
    led = EnergyLedger()
    if cfg.mode == "sprint":
        out, prune, mask, cnt, fetched, imb, info, pairs = _sprint(trace, cfg, led)
    else:
        out, prune, mask, cnt, fetched, imb, info, pairs = _streaming(trace, cfg, led)
    cnt.charge(led, cfg.energy)

    s, d, n = trace.seq_len, trace.embed, trace.valid_len
    if cfg.mode == "sprint":
        active = mask.queries
        span = n
    elif cfg.mode == "mask_only":
        active, span = mask.queries, n
    else:
        active, span = np.ones(s, dtype=bool), s
    P = prune[active][:, :span] if span else np.zeros((0, 0), bool)
    pruned_rate = float(P.mean()) if P.size else 0.0
    u_rows = (~P).sum(axis=1) if P.size else np.zeros(0)
    if cfg.mode in ("sprint", "pruning_only") and P.shape[0] >= 2:
        ov = empirical_overlap(P)
        emp, frac = ov.mean, ov.fraction
        exp_ov = expected_overlap(span, int(round(ov.mean_unpruned)))
    else:
        emp = frac = exp_ov = None
    qk_dots = cnt.chip["qk"]
    if cfg.mode in ("sprint",):
        score_comp = int(u_rows.sum())
    else:
        score_comp = int(active.sum()) * span
    token_fetches = int(fetched.sum())
    q_reads = int(active.sum()) if span else 0
    if cfg.mode == "sprint":
        bytes_fetched = token_fetches * 2 * d + q_reads * d
    else:
        bytes_fetched = int(cnt.ch["read_bits"].sum()) // 8
    cycles = int(info.get("cycles", 0))
    energy = led.by_category()
    total = sum(energy.values())
    dense_ops = 2 * 2 * s * s * d
    settings = {
        "noise_mode": cfg.noise.mode, "b_equiv": cfg.noise.b_equiv, "sigma": cfg.noise.sigma,
        "noise_seed": cfg.noise.seed, "overlap_thresholding": cfg.overlap_thresholding,
        "score_shift": cfg.score_shift, "gops_convention": GOPS_CONVENTION,
        "threshold": trace.threshold,
        "eviction_policy": "drop tokens pruned now, then oldest residents",
        "n_corelets": cfg.corelet.n_corelets, "kv_buffer_bytes": cfg.corelet.kv_buffer_bytes,
        "q_buffer_bytes": cfg.corelet.q_buffer_bytes,
        "index_buffer_bytes": cfg.corelet.index_buffer_bytes, "channels": cfg.channels,
    }
    for k in ("calibration_range", "threshold_msb", "evictions", "buffer_capacity_per_corelet"):
        if k in info:
            settings[k] = info[k]
    rep = PerfReport(
        mode=cfg.mode, preset=cfg.preset, seq_len=s, embed=d, valid_len=n,
        cycles_total=cycles, energy_by_category=energy, bytes_fetched=bytes_fetched,
        bytes_overhead=int(info.get("bytes_overhead", 0)), fetched_tokens=token_fetches,
        queries_processed=int(active.sum()), score_computations=score_comp,
        qk_dot_products=qk_dots, v_dot_products=cnt.chip["v"], prune_rate=pruned_rate,
        imbalance_ratio=imb.ratio if imb else 1.0,
        empty_corelet_events=imb.empty_events if imb else 0,
        empirical_overlap=emp, empirical_overlap_fraction=frac, expected_overlap=exp_ov,
        dense_ops=dense_ops,
        gops_per_s=dense_ops / cycles if cycles else 0.0,
        gops_per_j=dense_ops * 1e6 / total if total else 0.0,
        settings=settings,
    )
    return RunResult(rep, out, prune, active, led, fetched, pairs)


def run(trace, cfg: SimConfig):
    """Simulate one head; returns (PerfReport, int16 attention output)."""
    r = run_detailed(trace, cfg)
    return r.report, r.attention


def run_with_baseline(trace, cfg: SimConfig):
    """Run ``cfg`` and the baseline on the same trace and attach the ratios."""
    rep, out = run(trace, cfg)
    base, _ = run(trace, replace(cfg, mode="baseline", compute_output=False))
    return attach_comparison(rep, base), out, base


def aggregate(reports, baselines=None) -> PerfReport:
    """Layer-level totals over heads simulated one after another."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    first = reports[0]
    energy = {c: sum(r.energy_by_category[c] for r in reports) for c in CATEGORIES}
    total = sum(energy.values())
    cycles = sum(r.cycles_total for r in reports)
    dense = sum(r.dense_ops for r in reports)
    q = sum(r.queries_processed for r in reports)

    def wmean(attr):
        vals = [getattr(r, attr) for r in reports]
        if any(v is None for v in vals):
            return None
        return float(sum(v * r.queries_processed for v, r in zip(vals, reports)) / q) if q else 0.0

    rep = PerfReport(
        mode=first.mode, preset=first.preset, seq_len=sum(r.seq_len for r in reports),
        embed=first.embed, valid_len=sum(r.valid_len for r in reports), cycles_total=cycles,
        energy_by_category=energy, bytes_fetched=sum(r.bytes_fetched for r in reports),
        bytes_overhead=sum(r.bytes_overhead for r in reports),
        fetched_tokens=sum(r.fetched_tokens for r in reports), queries_processed=q,
        score_computations=sum(r.score_computations for r in reports),
        qk_dot_products=sum(r.qk_dot_products for r in reports),
        v_dot_products=sum(r.v_dot_products for r in reports),
        prune_rate=wmean("prune_rate"), imbalance_ratio=wmean("imbalance_ratio"),
        empty_corelet_events=sum(r.empty_corelet_events for r in reports),
        empirical_overlap=wmean("empirical_overlap"),
        empirical_overlap_fraction=wmean("empirical_overlap_fraction"),
        expected_overlap=wmean("expected_overlap"), dense_ops=dense,
        gops_per_s=dense / cycles if cycles else 0.0,
        gops_per_j=dense * 1e6 / total if total else 0.0,
        settings={"heads": len(reports), **{k: v for k, v in first.settings.items()
                                             if k not in ("calibration_range", "threshold",
                                                          "threshold_msb", "evictions")}},
    )
    if baselines is not None:
        attach_comparison(rep, aggregate(baselines))
    return rep
