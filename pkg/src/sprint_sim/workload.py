"""Attention-head traces: data model, synthetic generator and the ``SPRT`` file format.

A trace holds one head's int8 Q/K/V matrices, the unpadded length and the
per-head pruning threshold (in exact score-accumulator units).  Rows at or
beyond ``valid_len`` are padding and are stored as zeros.

File layout (little-endian, no padding between sections)::

    magic  b"SPRT"        4 bytes
    version u16 = 1
    s u32, d u32, valid_len u32, threshold i32
    Q, K, V               each s*d int8, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SPRT"
VERSION = 1
HEADER = struct.Struct("<4sHIIIi")
MAX_SEQ_LEN = 65536
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


class TraceFormatError(ValueError):
    """Base class for trace-file decoding errors; ``offset`` is the byte offset at fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(TraceFormatError):
    pass


class DimensionMismatchError(TraceFormatError):
    pass


class TruncatedPayloadError(TraceFormatError):
    pass


@dataclass(frozen=True, eq=False)
class AttentionTrace:
    q_matrix: np.ndarray
    k_matrix: np.ndarray
    v_matrix: np.ndarray
    valid_len: int
    threshold: int

    def __post_init__(self):
        mats = []
        for name in ("q_matrix", "k_matrix", "v_matrix"):
            m = np.asarray(getattr(self, name))
            if m.ndim != 2:
                raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
            if m.dtype != np.int8:
                if m.size and (m.min() < -128 or m.max() > 127):
                    raise ValueError(f"{name} has elements outside int8 range")
                m = m.astype(np.int8)
            m = np.ascontiguousarray(m)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
            mats.append(m)
        if not (mats[0].shape == mats[1].shape == mats[2].shape):
            raise ValueError("Q, K and V must share one s x d shape")
        s, d = mats[0].shape
        if not 1 <= s <= MAX_SEQ_LEN or d < 1:
            raise ValueError(f"invalid trace shape {s}x{d}")
        if not 0 <= self.valid_len <= s:
            raise ValueError(f"valid_len={self.valid_len} outside 0..{s}")
        if not INT32_MIN <= self.threshold <= INT32_MAX:
            raise ValueError("threshold does not fit in int32")
        object.__setattr__(self, "valid_len", int(self.valid_len))
        object.__setattr__(self, "threshold", int(self.threshold))

    @property
    def seq_len(self) -> int:
        return self.q_matrix.shape[0]

    @property
    def embed(self) -> int:
        return self.q_matrix.shape[1]

    def __eq__(self, other):
        if not isinstance(other, AttentionTrace):
            return NotImplemented
        return (
            self.valid_len == other.valid_len
            and self.threshold == other.threshold
            and np.array_equal(self.q_matrix, other.q_matrix)
            and np.array_equal(self.k_matrix, other.k_matrix)
            and np.array_equal(self.v_matrix, other.v_matrix)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        s, d = self.q_matrix.shape
        head = HEADER.pack(MAGIC, VERSION, s, d, self.valid_len, self.threshold)
        return head + self.q_matrix.tobytes() + self.k_matrix.tobytes() + self.v_matrix.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "AttentionTrace":
        if len(buf) < HEADER.size:
            raise MalformedHeaderError(
                f"file holds {len(buf)} bytes, header needs {HEADER.size}", len(buf))
        magic, version, s, d, valid_len, threshold = HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise MalformedHeaderError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise MalformedHeaderError(f"unsupported version {version}", 4)
        if not 1 <= s <= MAX_SEQ_LEN:
            raise DimensionMismatchError(f"sequence length {s} outside 1..{MAX_SEQ_LEN}", 6)
        if d < 1:
            raise DimensionMismatchError("embedding size must be positive", 10)
        if valid_len > s:
            raise DimensionMismatchError(f"valid_len {valid_len} exceeds s={s}", 14)
        block = s * d
        need = HEADER.size + 3 * block
        if len(buf) < need:
            # offset of the first missing byte
            raise TruncatedPayloadError(
                f"payload declares 3x{s}x{d} bytes but only {len(buf) - HEADER.size} present",
                len(buf))
        if len(buf) > need:
            raise DimensionMismatchError(
                f"{len(buf) - need} trailing bytes beyond declared {s}x{d} payload", need)
        mats = [np.frombuffer(buf, dtype=np.int8, count=block, offset=HEADER.size + i * block)
                .reshape(s, d) for i in range(3)]
        return cls(*mats, valid_len=valid_len, threshold=threshold)


def load_trace(path) -> AttentionTrace:
    return AttentionTrace.from_bytes(Path(path).read_bytes())


def save_trace(trace: AttentionTrace, path) -> None:
    Path(path).write_bytes(trace.to_bytes())


@dataclass(frozen=True)
class SyntheticSpec:
    seq_len: int
    embed: int = 64
    valid_len: int | None = None
    target_prune_rate: float = 0.75
    locality_strength: float = 0.8
    rng_seed: int = 0
    run_length: float = 8.0

    def __post_init__(self):
        if self.valid_len is None:
            object.__setattr__(self, "valid_len", self.seq_len)
        if not 1 <= self.seq_len <= MAX_SEQ_LEN:
            raise ValueError(f"seq_len {self.seq_len} outside 1..{MAX_SEQ_LEN}")
        if self.embed < 1:
            raise ValueError("embed must be positive")
        if not 1 <= self.valid_len <= self.seq_len:
            raise ValueError(f"infeasible valid_len={self.valid_len} for seq_len={self.seq_len}")
        for name in ("target_prune_rate", "locality_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.run_length < 1.0:
            raise ValueError("run_length must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")


def markov_states(n: int, hot_fraction: float, run_length: float, rng) -> np.ndarray:
    """Two-state Markov chain over ``n`` indices; True marks the 'hot' state.

    Mean hot-run length is ``run_length``; the stationary hot fraction is
    ``hot_fraction``.
    """
    if hot_fraction <= 0.0:
        return np.zeros(n, dtype=bool)
    if hot_fraction >= 1.0:
        return np.ones(n, dtype=bool)
    p_leave_hot = 1.0 / run_length
    p_enter_hot = min(1.0, p_leave_hot * hot_fraction / (1.0 - hot_fraction))
    u = rng.random(n)
    out = np.empty(n, dtype=bool)
    state = bool(u[0] < hot_fraction)
    for i in range(n):
        if i:
            state = (u[i] >= p_leave_hot) if state else (u[i] < p_enter_hot)
        out[i] = state
    return out


def markov_prune_patterns(n_queries: int, seq_len: int, prune_rate: float,
                          run_length: float = 8.0, flip: float = 0.05, seed: int = 0) -> np.ndarray:
    """Clustered prune vectors (True = pruned) for imbalance/locality studies.

    A shared Markov-clustered unpruned pattern is perturbed per query by
    re-drawing each position with probability ``flip``.
    """
    rng = np.random.default_rng(seed)
    base = markov_states(seq_len, 1.0 - prune_rate, run_length, rng)
    out = np.empty((n_queries, seq_len), dtype=bool)
    for t in range(n_queries):
        redraw = rng.random(seq_len) < flip
        fresh = markov_states(seq_len, 1.0 - prune_rate, run_length, rng)
        out[t] = ~np.where(redraw, fresh, base)
    return out


def _to_int8(x: np.ndarray) -> np.ndarray:
    peak = np.quantile(np.abs(x), 0.999) if x.size else 0.0
    if peak <= 0:
        return np.zeros(x.shape, dtype=np.int8)
    return np.clip(np.rint(x * (100.0 / peak)), -127, 127).astype(np.int8)


def calibrate_threshold(scores: np.ndarray, prune_rate: float) -> int:
    """Smallest-error threshold so that ``mean(scores < th)`` is close to ``prune_rate``."""
    flat = np.sort(np.asarray(scores, dtype=np.int64).ravel())
    k = int(round(prune_rate * flat.size))
    if k <= 0:
        th = int(flat[0])  # strict '<': nothing lies below the minimum
    elif k >= flat.size:
        th = int(flat[-1]) + 1
    else:
        th = int(flat[k])
    return max(INT32_MIN, min(INT32_MAX, th))


def generate_synthetic(spec: SyntheticSpec) -> AttentionTrace:
    """Build a trace whose exact-score prune rate matches ``spec.target_prune_rate``.

    Scores decompose into a key-only salience term shared by every query
    (Markov-clustered along the key axis) plus a query-specific random term;
    ``locality_strength`` sets their mix.  The threshold is the empirical
    quantile of the valid-query x valid-key exact scores.
    """
    rng = np.random.default_rng(spec.rng_seed)
    s, d, n = spec.seq_len, spec.embed, spec.valid_len
    lam = spec.locality_strength

    # salience direction spread over all coordinates so every element uses the int8 range
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    hot = markov_states(n, 1.0 - spec.target_prune_rate, spec.run_length, rng)
    salience = np.where(hot, 1.0, -1.0) + 0.35 * rng.standard_normal(n)

    k_noise = rng.standard_normal((n, d))
    k_noise -= np.outer(k_noise @ u, u)
    q_noise = rng.standard_normal((n, d))
    q_noise -= np.outer(q_noise @ u, u)
    # shared:random std ratio ~ 0.35*lam/(1-lam); 0.8 gives ~2.5x random overlap
    root = np.sqrt(max(d - 1, 1))
    k = salience[:, None] * u[None, :] * root + k_noise
    q = (lam * 0.35) * u[None, :] + (1.0 - lam) * q_noise
    if d == 1:
        k = salience[:, None] + (1.0 - lam) * rng.standard_normal((n, 1))
        q = np.ones((n, 1)) + (1.0 - lam) * rng.standard_normal((n, 1))

    q_full = np.zeros((s, d), dtype=np.int8)
    k_full = np.zeros((s, d), dtype=np.int8)
    v_full = np.zeros((s, d), dtype=np.int8)
    q_full[:n] = _to_int8(q)
    k_full[:n] = _to_int8(k)
    v_full[:n] = rng.integers(-100, 101, size=(n, d), dtype=np.int8)

    scores = q_full[:n].astype(np.int64) @ k_full[:n].astype(np.int64).T
    th = calibrate_threshold(scores, spec.target_prune_rate)
    return AttentionTrace(q_full, k_full, v_full, valid_len=n, threshold=th)


def measured_prune_rate(trace: AttentionTrace) -> float:
    """Exact-score prune rate over valid queries and valid keys."""
    n = trace.valid_len
    if n == 0:
        return 0.0
    q = trace.q_matrix[:n].astype(np.int64)
    k = trace.k_matrix[:n].astype(np.int64)
    return float(np.mean((q @ k.T) < trace.threshold))
