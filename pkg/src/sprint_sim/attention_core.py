"""Bit-exact fixed-point reference arithmetic for one attention row.

Conventions
-----------
* scores are exact integer accumulators of int8 x int8 products (int64 arrays);
* prune vectors are boolean arrays, True = pruned;
* softmax inputs are signed 12-bit codes with 4 fractional bits (logit = code/16);
  the pruned overwrite value ``NEG_C`` is the most negative code and unpruned
  codes are clipped to one above it;
* probabilities are unsigned 8-bit codes where 255 represents 1.0;
* the attention output is int16 in units of 1/256 of a value element.

Rounding is round-half-up everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SOFTMAX_IN_BITS = 12
SOFTMAX_FRAC_BITS = 4
NEG_C = -(1 << (SOFTMAX_IN_BITS - 1))
CODE_MAX = (1 << (SOFTMAX_IN_BITS - 1)) - 1
PROB_ONE = 255
OUT_FRAC_BITS = 8
LUT_SIZE = 64
LUT_ONE = 65535
DEFAULT_SCORE_SHIFT = 13


def _build_luts():
    step = 1.0 / (1 << SOFTMAX_FRAC_BITS)
    idx = np.arange(LUT_SIZE, dtype=np.float64)
    lo = np.floor(np.exp(-idx * step) * LUT_ONE + 0.5).astype(np.int64)
    hi = np.floor(np.exp(-idx * LUT_SIZE * step) * LUT_ONE + 0.5).astype(np.int64)
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


# exp(-x) for the low and high 6-bit halves of the 12-bit non-negative offset
EXP_LUT_LO, EXP_LUT_HI = _build_luts()


class SparseScores(NamedTuple):
    indices: np.ndarray
    values: np.ndarray
    length: int

    def dense(self, fill=0) -> np.ndarray:
        out = np.full(self.length, fill, dtype=np.int64)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True, eq=False)
class ProbVector:
    probs: np.ndarray  # uint8 codes, 255 == 1.0
    empty: bool = False

    def as_float(self) -> np.ndarray:
        return self.probs.astype(np.float64) / PROB_ONE


def round_half_up_div(num, den):
    """floor(num/den + 1/2) for integer arrays, den > 0."""
    num = np.asarray(num, dtype=np.int64)
    return (2 * num + den) // (2 * den)


def exact_scores(q, K) -> np.ndarray:
    q = np.asarray(q)
    K = np.asarray(K)
    if q.ndim != 1 or K.ndim != 2 or K.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: q {q.shape} vs K {K.shape}")
    return K.astype(np.int64) @ q.astype(np.int64)


def score_matrix(Q, K) -> np.ndarray:
    """All exact scores Q @ K.T; float64 BLAS is exact for int8 operands below 2**53."""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    return (Q @ K.T).astype(np.int64)


def quantize_scores(scores, b: int, lo: int, hi: int) -> np.ndarray:
    """Snap onto the centres of 2**b equal bins covering [lo, hi].

    Values outside the range clamp to the end bins, so the error inside the
    range is at most half a bin width.  Returns float64 level values.
    """
    if not 1 <= b <= 16:
        raise ValueError(f"b={b} outside 1..16")
    if int(lo) != lo or int(hi) != hi:
        raise ValueError("quantization bounds must be integers")
    lo, hi = int(lo), int(hi)
    if not lo < hi:
        raise ValueError(f"invalid range ({lo}, {hi})")
    bins = 1 << b
    x = np.clip(np.asarray(scores, dtype=np.int64), lo, hi)
    k = np.minimum((x - lo) * bins // (hi - lo), bins - 1)
    return lo + (2 * k + 1) * (hi - lo) / (2 * bins)


def quantization_step(b: int, lo: int, hi: int) -> float:
    return (hi - lo) / (1 << b)


def threshold_prune(scores, th) -> np.ndarray:
    return np.asarray(scores) < th


def to_softmax_codes(scores, shift: int = DEFAULT_SCORE_SHIFT) -> np.ndarray:
    """Accumulator scores -> 12-bit softmax input codes (round-half-up, clipped)."""
    s = np.asarray(scores, dtype=np.int64)
    if shift > 0:
        s = (s + (1 << (shift - 1))) >> shift
    return np.clip(s, NEG_C + 1, CODE_MAX)


def lut_exp(offset) -> np.ndarray:
    """exp(-offset/16) * 65535**2 from the two 64-entry tables; offset in 0..4095."""
    off = np.asarray(offset, dtype=np.int64)
    return EXP_LUT_HI[off >> 6] * EXP_LUT_LO[off & (LUT_SIZE - 1)]


def softmax_lut(codes, prune=None, neg_c: int = NEG_C) -> ProbVector:
    """Two-LUT softmax over 12-bit codes.

    Pruned entries are overwritten with ``neg_c`` before the exponent.  The
    row maximum (over unpruned entries) is subtracted so every offset lies in
    0..4095; its 6-bit halves index the high/low exponent tables whose outputs
    are multiplied.  Normalisation divides running sums, so each 8-bit output
    is within one code of the exact ratio and the codes sum to exactly 255.
    """
    x = np.asarray(codes, dtype=np.int64)
    if x.ndim != 1:
        raise ValueError("softmax row must be 1-D")
    if x.size and (x.min() < NEG_C or x.max() > CODE_MAX):
        raise ValueError("softmax inputs must be 12-bit codes")
    if prune is None:
        prune = np.zeros(x.shape, dtype=bool)
    prune = np.asarray(prune, dtype=bool)
    if prune.shape != x.shape:
        raise ValueError("prune vector length differs from score length")
    if x.size == 0 or prune.all():
        return ProbVector(np.zeros(x.shape, dtype=np.uint8), empty=True)
    x = np.where(prune, neg_c, x)
    top = x[~prune].max()
    e = lut_exp(np.clip(top - x, 0, (1 << SOFTMAX_IN_BITS) - 1))
    csum = np.cumsum(e)
    total = int(csum[-1])
    cum = round_half_up_div(csum * PROB_ONE, total)
    p = np.diff(cum, prepend=0)
    return ProbVector(p.astype(np.uint8), empty=False)


def weighted_sum_v(probs: ProbVector, V, prune=None) -> np.ndarray:
    """sum_j p_j * V[j] over unpruned rows, rounded once to the int16 output scale."""
    p = np.asarray(probs.probs if isinstance(probs, ProbVector) else probs, dtype=np.int64)
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[0] != p.shape[0]:
        raise ValueError(f"dimension mismatch: probs {p.shape} vs V {V.shape}")
    if prune is not None:
        prune = np.asarray(prune, dtype=bool)
        if prune.shape != p.shape:
            raise ValueError("prune vector length differs from probability length")
        p = np.where(prune, 0, p)
    acc = p @ V.astype(np.int64)
    out = round_half_up_div(acc << OUT_FRAC_BITS, PROB_ONE)
    return np.clip(out, -32768, 32767).astype(np.int16)


def recompute_unpruned(q, K, prune) -> SparseScores:
    K = np.asarray(K)
    prune = np.asarray(prune, dtype=bool)
    if prune.shape != (K.shape[0],):
        raise ValueError("prune vector length differs from key count")
    idx = np.flatnonzero(~prune)
    return SparseScores(idx, exact_scores(q, K[idx]), K.shape[0])


@dataclass(frozen=True)
class AttentionRow:
    output: np.ndarray  # int16, length d
    probs: ProbVector
    unpruned: int

    @property
    def empty(self) -> bool:
        return self.probs.empty


def attention_row(q, K, V, prune, shift: int = DEFAULT_SCORE_SHIFT) -> AttentionRow:
    """Reference row: dense exact scores, mask, LUT softmax, weighted V sum."""
    prune = np.asarray(prune, dtype=bool)
    codes = to_softmax_codes(exact_scores(q, K), shift)
    probs = softmax_lut(codes, prune)
    out = weighted_sum_v(probs, V, prune)
    return AttentionRow(out, probs, int((~prune).sum()))


def sparse_attention_row(q, K, V, prune, shift: int = DEFAULT_SCORE_SHIFT) -> AttentionRow:
    """Same row from the recomputed unpruned scores only (the on-chip path)."""
    prune = np.asarray(prune, dtype=bool)
    sparse = recompute_unpruned(q, K, prune)
    codes = np.full(prune.shape, NEG_C, dtype=np.int64)
    codes[sparse.indices] = to_softmax_codes(sparse.values, shift)
    probs = softmax_lut(codes, prune)
    out = weighted_sum_v(probs, V, prune)
    return AttentionRow(out, probs, len(sparse.indices))


def reference_attention(Q, K, V, prune_matrix, active_queries=None,
                        shift: int = DEFAULT_SCORE_SHIFT):
    """Attention output matrix (int16) for every active query; inactive rows are 0.

    Returns ``(output, empty_rows)`` where ``empty_rows`` flags fully pruned rows.
    """
    Q = np.asarray(Q)
    s, d = Q.shape[0], V.shape[1]
    if active_queries is None:
        active_queries = np.ones(s, dtype=bool)
    out = np.zeros((s, d), dtype=np.int16)
    empty = np.zeros(s, dtype=bool)
    for t in np.flatnonzero(active_queries):
        row = attention_row(Q[t], K, V, prune_matrix[t], shift)
        out[t] = row.output
        empty[t] = row.empty
    return out, empty
