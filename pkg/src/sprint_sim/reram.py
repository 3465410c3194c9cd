"""ReRAM storage and approximate in-memory thresholding.

Keys are split into a signed 4-bit MSB nibble (``x >> 4``) and an unsigned
LSB nibble (``x & 0xF``) so that ``x == 16*msb + lsb``.  MSB nibbles live in
transposable arrays, one key per column, and take part in the analog dot
product; LSB nibbles and the Q/V matrices live in standard arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention_core import quantize_scores
from .metrics import EnergyConstants, EnergyLedger

MSB_SHIFT = 4


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class CrossbarSpec:
    rows: int = 64
    cols: int = 128
    bits_per_cell: int = 4

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("crossbar needs rows*cols > 0")
        if not 1 <= self.bits_per_cell <= 4:
            raise ValueError("bits_per_cell must be in 1..4")


TRANSPOSABLE = CrossbarSpec(64, 128, 4)
STANDARD = CrossbarSpec(256, 128, 4)


def split_msb_lsb(x):
    x = np.asarray(x, dtype=np.int16)
    return (x >> MSB_SHIFT).astype(np.int8), (x & 0xF).astype(np.uint8)


def join_msb_lsb(msb, lsb):
    return (np.asarray(msb, dtype=np.int16) * 16 + np.asarray(lsb, dtype=np.int16)).astype(np.int8)


@dataclass(frozen=True)
class ReramLayout:
    """Key placement over channels, banks and transposable columns.

    Token ``j`` goes to channel ``j % channels`` at per-channel slot
    ``j // channels``.  Slots fill transposable tiles densely, round-robin
    over the channel's banks; a key wider than the tile's rows spans
    ``cols_per_key`` adjacent columns.
    """

    channels: int = 16
    banks_per_channel: int = 4
    msb_bits: int = 4
    tiles_per_bank: int = 64
    vectors_per_row: int = 8
    crossbar: CrossbarSpec = TRANSPOSABLE

    def __post_init__(self):
        if self.channels < 1 or self.banks_per_channel < 1:
            raise ValueError("layout needs at least one channel and one bank")
        if self.msb_bits != MSB_SHIFT:
            raise ValueError("only a 4-bit MSB split is modelled")
        if self.tiles_per_bank < 1 or self.vectors_per_row < 1:
            raise ValueError("tiles_per_bank and vectors_per_row must be positive")

    def cols_per_key(self, d: int) -> int:
        return math.ceil(d / self.crossbar.rows)

    def keys_per_tile(self, d: int) -> int:
        k = self.crossbar.cols // self.cols_per_key(d)
        if k < 1:
            raise CapacityError(f"d={d} does not fit one tile")
        return k

    def capacity(self, d: int) -> int:
        return self.channels * self.banks_per_channel * self.tiles_per_bank * self.keys_per_tile(d)

    def placement(self, n_tokens: int, d: int):
        """(channel, bank, column) arrays for tokens 0..n_tokens-1."""
        if n_tokens > self.capacity(d):
            raise CapacityError(f"{n_tokens} keys exceed transposable capacity {self.capacity(d)}")
        j = np.arange(n_tokens)
        slot = j // self.channels
        kpt = self.keys_per_tile(d)
        tile = slot // kpt
        bank = tile % self.banks_per_channel
        col = (tile // self.banks_per_channel) * self.crossbar.cols + (slot % kpt) * self.cols_per_key(d)
        return j % self.channels, bank, col

    def tiles_used(self, n_tokens: int, d: int) -> np.ndarray:
        """Occupied (tile) count per channel; each tile activation covers all its columns."""
        per_ch = np.array([len(range(c, n_tokens, self.channels)) for c in range(self.channels)])
        return -(-per_ch // self.keys_per_tile(d))

    def tile_activations(self, n_tokens: int, d: int) -> np.ndarray:
        """Per-channel 64x128 activations for one full-head in-memory pass."""
        segs = math.ceil(d / self.crossbar.rows)
        return self.tiles_used(n_tokens, d) * segs

    def columns_used(self, n_tokens: int, d: int) -> np.ndarray:
        per_ch = np.array([len(range(c, n_tokens, self.channels)) for c in range(self.channels)])
        return per_ch * self.cols_per_key(d)


@dataclass(frozen=True)
class NoiseModel:
    """Degradation of the analog dot product.

    ``off`` returns the exact MSB scores, ``quantize_only`` snaps them to a
    ``b_equiv``-bit grid over the calibration range, ``quantize_plus_gaussian``
    adds seeded N(0, sigma) before snapping.
    """

    mode: str = "quantize_only"
    b_equiv: int = 5
    sigma: float = 0.0
    seed: int = 0

    MODES = ("off", "quantize_only", "quantize_plus_gaussian")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"noise mode must be one of {self.MODES}")
        if not 1 <= self.b_equiv <= 16:
            raise ValueError("b_equiv must be in 1..16")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class StoredKeys:
    layout: ReramLayout
    msb: np.ndarray        # n x d signed nibbles, transposable arrays
    lsb: np.ndarray        # n x d unsigned nibbles, standard arrays
    channel: np.ndarray
    bank: np.ndarray
    column: np.ndarray
    energy: EnergyConstants = field(default_factory=EnergyConstants)

    @property
    def n_tokens(self) -> int:
        return self.msb.shape[0]

    @property
    def embed(self) -> int:
        return self.msb.shape[1]


def charge_row_writes(ledger: EnergyLedger, n_rows: int, d: int, channels: int,
                      energy: EnergyConstants):
    """Write energy for n_rows vectors of d int8 elements spread by token interleaving."""
    per_ch = np.array([len(range(c, n_rows, channels)) for c in range(channels)])
    ledger.charge_channels("reram_write", 8 * d * energy.fj("reram_write_pj_per_bit"), per_ch)


def store_keys(K, layout: ReramLayout, ledger: EnergyLedger | None = None,
               energy: EnergyConstants | None = None) -> StoredKeys:
    energy = energy or EnergyConstants()
    K = np.asarray(K)
    n, d = K.shape
    ch, bank, col = layout.placement(n, d)
    msb, lsb = split_msb_lsb(K)
    for a in (msb, lsb, ch, bank, col):
        a.setflags(write=False)
    if ledger is not None:
        charge_row_writes(ledger, n, d, layout.channels, energy)
    return StoredKeys(layout, msb, lsb, ch, bank, col, energy)


def msb_scores(q_msb, k_msb) -> np.ndarray:
    """Exact MSB x MSB dot products for one query (1-D) or many (2-D)."""
    q = np.asarray(q_msb, dtype=np.float64)
    k = np.asarray(k_msb, dtype=np.float64)
    return (q @ k.T).astype(np.int64)


def calibration_range(scores) -> tuple:
    s = np.asarray(scores)
    lo, hi = int(s.min()), int(s.max())
    if lo == hi:
        hi = lo + 1
    return lo, hi


def degrade(exact, noise: NoiseModel, calib_range, query_index=0) -> np.ndarray:
    exact = np.asarray(exact, dtype=np.int64)
    if noise.mode == "off":
        return exact.astype(np.float64)
    lo, hi = calib_range
    x = exact
    if noise.mode == "quantize_plus_gaussian" and noise.sigma > 0:
        rng = np.random.default_rng([noise.seed, int(query_index)])
        x = np.floor(exact + rng.normal(0.0, noise.sigma, exact.shape) + 0.5).astype(np.int64)
    return quantize_scores(x, noise.b_equiv, lo, hi)


def _charge_inmem(stored: StoredKeys, ledger: EnergyLedger, n_queries: int):
    if ledger is None or n_queries == 0:
        return
    lay, d, n = stored.layout, stored.embed, stored.n_tokens
    e = stored.energy
    ledger.charge_channels("inmem_mac", e.fj("inmem_tile_pj"), lay.tile_activations(n, d) * n_queries)


def inmem_score(q_msb, stored: StoredKeys, noise: NoiseModel = NoiseModel(),
                ledger: EnergyLedger | None = None, calib_range=None, query_index: int = 0):
    """Approximate scores of every stored key against one query's MSB nibbles."""
    q_msb = np.asarray(q_msb)
    if q_msb.shape != (stored.embed,):
        raise ValueError("query length differs from stored key width")
    if q_msb.size and (q_msb.min() < -8 or q_msb.max() > 7):
        raise ValueError("query must already be truncated to 4-bit MSBs")
    exact = msb_scores(q_msb, stored.msb)
    if calib_range is None:
        calib_range = calibration_range(exact) if exact.size else (0, 1)
    _charge_inmem(stored, ledger, 1)
    return degrade(exact, noise, calib_range, query_index)


def inmem_score_matrix(Q_msb, stored: StoredKeys, noise: NoiseModel, calib_range,
                       ledger: EnergyLedger | None = None, query_ids=None) -> np.ndarray:
    """inmem_score for a batch of queries; row t uses the noise stream of ``query_ids[t]``."""
    Q_msb = np.asarray(Q_msb)
    exact = msb_scores(Q_msb, stored.msb)
    _charge_inmem(stored, ledger, Q_msb.shape[0])
    if query_ids is None:
        query_ids = np.arange(Q_msb.shape[0])
    if noise.mode == "quantize_plus_gaussian" and noise.sigma > 0:
        return np.stack([degrade(exact[i], noise, calib_range, query_ids[i])
                         for i in range(exact.shape[0])]) if exact.shape[0] else exact.astype(float)
    return degrade(exact, noise, calib_range)


def msb_threshold(th: int, msb_bits: int = MSB_SHIFT) -> int:
    """Full-score threshold moved to MSB x MSB scale, rounded toward -inf."""
    return int(th) >> (2 * (8 - msb_bits))


def analog_compare(scores, th, ledger: EnergyLedger | None = None,
                   stored: StoredKeys | None = None, energy: EnergyConstants | None = None):
    """Comparator bank plus 1-bit ADC: bit j set iff scores[j] < th.

    With ``stored`` given the charge is split per channel by tile; otherwise a
    single bank of ``ceil(len/128)`` arrays is charged.
    """
    scores = np.asarray(scores)
    bits = scores < th
    if ledger is not None:
        if stored is not None:
            lay, e = stored.layout, stored.energy
            n, d = stored.n_tokens, stored.embed
            ledger.charge_channels("analog_compare", e.fj("analog_cmp_128col_pj"),
                                   lay.tiles_used(n, d))
            ledger.charge_channels("adc_1bit", e.fj("comparator_fj"), lay.columns_used(n, d))
        else:
            e = energy or EnergyConstants()
            ledger.charge("analog_compare", e.fj("analog_cmp_128col_pj"),
                          math.ceil(scores.size / 128))
            ledger.charge("adc_1bit", e.fj("comparator_fj"), scores.size)
    return bits


def transposed_read(stored: StoredKeys, token: int, ledger: EnergyLedger | None = None):
    """MSB nibbles of one key, charged to that key's channel."""
    if not 0 <= token < stored.n_tokens:
        raise KeyError(f"token {token} not stored")
    if ledger is not None:
        bits = stored.embed * stored.layout.msb_bits
        ledger.charge("reram_read", bits * stored.energy.fj("reram_read_pj_per_bit"),
                      channel=int(stored.channel[token]))
    return stored.msb[token].copy()


def standard_read_lsb(stored: StoredKeys, token: int, ledger: EnergyLedger | None = None):
    if not 0 <= token < stored.n_tokens:
        raise KeyError(f"token {token} not stored")
    if ledger is not None:
        bits = stored.embed * (8 - stored.layout.msb_bits)
        ledger.charge("reram_read", bits * stored.energy.fj("reram_read_pj_per_bit"),
                      channel=int(stored.channel[token]))
    return stored.lsb[token].copy()
