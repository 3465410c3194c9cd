"""CORELET engines: token interleaving, K/V buffer residency and phase timing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention_core import DEFAULT_SCORE_SHIFT, sparse_attention_row

MAC_WIDTH = 64


@dataclass(frozen=True)
class CoreletConfig:
    n_corelets: int = 1
    kv_buffer_bytes: int = 16384   # K and V buffers together, all corelets
    q_buffer_bytes: int = 64
    index_buffer_bytes: int = 512
    mac_width: int = MAC_WIDTH
    lut_latency: int = 2
    divider_latency: int = 4
    dividers: int = 2

    def __post_init__(self):
        if self.n_corelets < 1:
            raise ValueError("need at least one CORELET")
        for name in ("kv_buffer_bytes", "q_buffer_bytes", "index_buffer_bytes", "mac_width",
                     "dividers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lut_latency < 0 or self.divider_latency < 0:
            raise ValueError("latencies must be non-negative")

    def capacity_vectors(self, d: int) -> int:
        """K (or V) vectors held in total; half the K/V storage goes to each."""
        return self.kv_buffer_bytes // 2 // d

    def capacity_per_corelet(self, d: int) -> int:
        return self.capacity_vectors(d) // self.n_corelets

    def cycles_per_vector(self, d: int) -> int:
        return math.ceil(d / self.mac_width)


def token_interleave(s: int, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one CORELET")
    return np.arange(s) % n


def sequential_blocks(s: int, n: int) -> np.ndarray:
    """Contiguous chunks of ceil(s/n) tokens per CORELET (the non-interleaved mapping)."""
    if n < 1:
        raise ValueError("need at least one CORELET")
    return np.arange(s) // math.ceil(s / n)


@dataclass(frozen=True)
class Imbalance:
    ratio: float
    empty_events: int


def imbalance_ratio(prune_vectors, mapping, n: int | None = None) -> Imbalance:
    """Mean over queries of max/min unpruned tokens per CORELET.

    A CORELET left without unpruned tokens counts as min=1; such events are tallied.
    """
    P = np.atleast_2d(np.asarray(prune_vectors, dtype=bool))
    mapping = np.asarray(mapping)
    n = int(mapping.max()) + 1 if n is None else n
    if P.shape[0] == 0:
        return Imbalance(1.0, 0)
    if n < 2:
        return Imbalance(1.0, 0)
    onehot = np.zeros((P.shape[1], n), dtype=np.int64)
    onehot[np.arange(P.shape[1]), mapping] = 1
    counts = (~P).astype(np.int64) @ onehot
    mx = counts.max(axis=1)
    mn = counts.min(axis=1)
    empty = int((mn == 0).sum())
    return Imbalance(float(np.mean(mx / np.maximum(mn, 1))), empty)


@dataclass(frozen=True)
class Mask2D:
    queries: np.ndarray  # bool, length s
    keys: np.ndarray     # bool, length s

    @property
    def score_computations(self) -> int:
        return int(self.queries.sum()) * int(self.keys.sum())


def apply_2d_mask(trace, enabled: bool = True) -> Mask2D:
    """Active query and key index sets; padding is skipped on both axes when enabled."""
    s = trace.seq_len
    active = np.arange(s) < trace.valid_len if enabled else np.ones(s, dtype=bool)
    return Mask2D(active, active.copy())


class BufferState:
    """Per-CORELET key/value residency.

    K and V buffers always hold the same token set (one prune vector serves both).
    On overflow the buffer keeps the most recently processed ``capacity`` tokens:
    tokens no longer unpruned go first, then the oldest residents.
    """

    def __init__(self, n_tokens: int, mapping, capacity_per_corelet: int):
        self.mapping = np.asarray(mapping)
        self.n = int(self.mapping.max()) + 1 if self.mapping.size else 1
        self.capacity = int(capacity_per_corelet)
        self.resident = np.zeros(n_tokens, dtype=bool)
        self.rotating_ptr = np.zeros(self.n, dtype=np.int64)
        self.evictions = 0

    @property
    def k_resident(self) -> np.ndarray:
        return self.resident

    @property
    def v_resident(self) -> np.ndarray:
        return self.resident

    def fetch_set(self, mem_req, locality) -> np.ndarray:
        """Tokens to bring from memory: new requests plus reusable keys lost to eviction."""
        return np.asarray(mem_req, dtype=bool) | (np.asarray(locality, dtype=bool) & ~self.resident)

    def commit(self, needed, fetched):
        """Residency after a query that scored ``needed`` (resident ones first, then fetched)."""
        needed = np.asarray(needed, dtype=bool)
        fetched = np.asarray(fetched, dtype=bool)
        reused = needed & self.resident
        new = np.zeros_like(self.resident)
        for c in range(self.n):
            mine = self.mapping == c
            order = np.r_[np.flatnonzero(reused & mine), np.flatnonzero(fetched & mine)]
            keep = order[-self.capacity:] if self.capacity > 0 else order[:0]
            new[keep] = True
            self.evictions += len(order) - len(keep)
            self.rotating_ptr[c] = len(order) % max(self.capacity, 1)
        self.resident = new
        return self


def list_schedule_end(avail, start: int, cost) -> int:
    """Finish time of one unit consuming items in arrival order.

    The rotating pointer skips items still in flight, so the unit only stalls
    when nothing is available.  ``cost`` is a scalar or per-item cycle count.
    """
    a = np.maximum(np.asarray(avail, dtype=np.int64), start)
    n = a.size
    if n == 0:
        return int(start)
    order = np.argsort(a, kind="stable")
    a = a[order]
    c = np.broadcast_to(np.asarray(cost, dtype=np.int64), (n,))[order]
    tail = np.cumsum(c[::-1])[::-1]  # work remaining from item k onward
    return int(np.max(a + tail))


@dataclass(frozen=True)
class PipelineState:
    qk_end: int = 0
    softmax_end: int = 0
    vpu_end: int = 0


@dataclass(frozen=True)
class QueryTiming:
    qk_end: int
    softmax_end: int
    vpu_end: int
    qk_busy: int
    v_busy: int
    softmax_counts: tuple

    def state(self) -> PipelineState:
        return PipelineState(self.qk_end, self.softmax_end, self.vpu_end)


def softmax_cycles(u_per_corelet, cfg: CoreletConfig) -> int:
    """Exponent pass at one element per cycle, then the dividers normalise."""
    u = np.asarray(u_per_corelet, dtype=np.int64)
    if u.size == 0 or u.max() == 0:
        return 0
    per = u + -(-u // cfg.dividers)
    return int(per.max()) + cfg.lut_latency + cfg.divider_latency


def _unit_end(tokens, avail, cost, corelet_of, start, n):
    tokens = np.asarray(tokens, dtype=np.int64)
    c_of = np.asarray(corelet_of)[tokens] if tokens.size else tokens
    avail = np.asarray(avail, dtype=np.int64)
    cost = np.broadcast_to(np.asarray(cost, dtype=np.int64), tokens.shape)
    end = start
    for c in range(n):
        sel = c_of == c
        end = max(end, list_schedule_end(avail[sel], start, cost[sel]))
    return end, int(cost.sum())


def query_timing(k_tokens, k_avail, k_cost, v_tokens, v_avail, v_cost, softmax_counts,
                 qk_start: int, prev: PipelineState, cfg: CoreletConfig,
                 corelet_of) -> QueryTiming:
    """Phase-level timing of QK-PU, softmax and V-PU for one query or query group.

    QK of this query may overlap the previous query's softmax and V-PU, but
    each unit runs one query at a time.  Keys and values arrive at
    ``*_avail``; costs are cycles per item.
    """
    start = max(int(qk_start), prev.qk_end)
    qk_end, qk_busy = _unit_end(k_tokens, k_avail, k_cost, corelet_of, start, cfg.n_corelets)
    sm_start = max(qk_end, prev.softmax_end)
    sm_end = sm_start + softmax_cycles(softmax_counts, cfg)
    v_start = max(sm_end, prev.vpu_end)
    v_end, v_busy = _unit_end(v_tokens, v_avail, v_cost, corelet_of, v_start, cfg.n_corelets)
    return QueryTiming(qk_end, sm_end, v_end, qk_busy, v_busy,
                       tuple(int(x) for x in softmax_counts))


@dataclass(frozen=True)
class QueryResult:
    timing: QueryTiming
    row: object
    fetched: np.ndarray


def process_query(q, K, V, prune, buffers: BufferState, mem_req, locality, arrivals,
                  qk_start: int, prev: PipelineState, cfg: CoreletConfig,
                  shift: int = DEFAULT_SCORE_SHIFT, compute_row: bool = True) -> QueryResult:
    """Score, normalise and accumulate one query on the CORELETs.

    ``arrivals`` is a pair of per-token arrays (K done, V done) holding the
    completion cycle of every token fetched for this query; resident keys
    are available at ``qk_start``.  Values come from the bit-exact reference
    path, so timing never changes them.
    """
    prune = np.asarray(prune, dtype=bool)
    needed = ~prune
    fetched = buffers.fetch_set(mem_req, locality)
    if np.any(fetched & ~needed):
        raise RuntimeError("fetch set contains pruned tokens")
    tokens = np.flatnonzero(needed)
    k_done, v_done = arrivals
    is_f = fetched[tokens]
    k_av = np.where(is_f, np.asarray(k_done)[tokens] if tokens.size else 0, qk_start)
    v_av = np.where(is_f, np.asarray(v_done)[tokens] if tokens.size else 0, qk_start)
    cpv = cfg.cycles_per_vector(K.shape[1])
    u = np.bincount(buffers.mapping[tokens], minlength=cfg.n_corelets) if tokens.size \
        else np.zeros(cfg.n_corelets, dtype=np.int64)
    timing = query_timing(tokens, k_av, cpv, tokens, v_av, cpv, u, qk_start, prev, cfg,
                          buffers.mapping)
    row = sparse_attention_row(q, K, V, prune, shift) if compute_row else None
    buffers.commit(needed, fetched)
    return QueryResult(timing, row, fetched)
