"""Memory controller: locality detection, address generation and command timing.

Timing semantics (per channel; all values in controller cycles)::

    t0     = max(issue_cycle, previous t0 + 1)          command bus, 1 cmd/cycle
    act    = max(t0 [+ tRP on conflict], last_act + tRRD, 4th-last act + tFAW)
    column = act + tRCD if the bank needed an activation else t0
    done   = max(column + tCL, previous done + 1) + burst - 1

CopyQ needs neither precharge nor activation and takes the bus for its
burst; it raises the in-memory busy flag, and only ReadP may follow until
``CopyQ done + tAxTh`` has passed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

NEG_INF = -(1 << 60)
_SEG = 1 << 42  # per-segment offset for segmented running maxima


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimingConfig:
    tCL: int = 11
    tRCD: int = 11
    tRP: int = 11
    tAxTh: int = 8
    tFAW: int = 20
    tRRD: int = 4
    clock_ghz: float = 1.0
    channel_width_bits: int = 64
    channels_per_corelet: int = 16

    def __post_init__(self):
        for name in ("tCL", "tRCD", "tRP", "tAxTh", "tFAW", "tRRD"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tAxTh > 8:
            raise ValueError("tAxTh is bounded by 8 cycles")
        if self.channel_width_bits < 1 or self.channels_per_corelet < 1:
            raise ValueError("channel geometry must be positive")

    def beats(self, bits: int) -> int:
        return max(1, math.ceil(bits / self.channel_width_bits))


class Kind(enum.Enum):
    COPYQ = "CopyQ"
    READP = "ReadP"
    READ = "Read"
    WRITE = "Write"
    ACTIVATE = "Activate"
    PRECHARGE = "Precharge"


@dataclass(frozen=True)
class MemoryCommand:
    kind: Kind
    channel: int = 0
    bank: int = 0
    row: int = 0
    col: int = 0
    issue_cycle: int = 0
    burst_len: int = 8
    start_flag: bool = True  # CopyQ only: raises the in-memory busy window


# ---------------------------------------------------------------- SLD engine

def _bits(v) -> np.ndarray:
    return np.asarray(v, dtype=bool)


def sld_compute(prev, curr):
    """(mem_req, locality) = (prev & ~curr, ~prev & ~curr)."""
    prev, curr = _bits(prev), _bits(curr)
    if prev.shape != curr.shape:
        raise ValueError(f"prune vector lengths differ: {prev.shape} vs {curr.shape}")
    return prev & ~curr, ~prev & ~curr


def first_query_bootstrap(curr):
    curr = _bits(curr)
    return ~curr, np.zeros_like(curr)


def generate_requests(mem_req, channels: int) -> list:
    """Per-channel ascending token lists from a base register plus an up-counter.

    Channel ``c`` walks addresses ``c, c+channels, ...``; clear bits are
    skipped without emitting anything.
    """
    bits = _bits(mem_req)
    return [np.flatnonzero(bits[c::channels]) * channels + c for c in range(channels)]


def generate_key_indices(locality, channels: int) -> list:
    """Buffer lookups for keys that are still resident; same walk as the MRG."""
    return generate_requests(locality, channels)


# ---------------------------------------------------------------- scalar scheduler

class ChannelScheduler:
    """Incremental in-order scheduler for one channel."""

    def __init__(self, timing: TimingConfig = TimingConfig(), channel: int = 0):
        self.t = timing
        self.channel = channel
        self.last_issue = NEG_INF
        self.last_done = NEG_INF
        self.open_rows = {}
        self.acts = []          # activation times, most recent last
        self.copyq_done = None
        self.history = []

    def _activate(self, t0, conflict):
        t = self.t
        a = t0 + (t.tRP if conflict else 0)
        if self.acts:
            a = max(a, self.acts[-1] + t.tRRD)
        if len(self.acts) >= 4:
            a = max(a, self.acts[-4] + t.tFAW)
        self.acts.append(a)
        del self.acts[:-4]
        return a

    def issue(self, cmd: MemoryCommand) -> int:
        t = self.t
        if cmd.channel != self.channel:
            raise ProtocolError(f"command for channel {cmd.channel} sent to channel {self.channel}")
        if cmd.burst_len < 1 and cmd.kind in (Kind.READ, Kind.WRITE, Kind.COPYQ, Kind.READP):
            raise ProtocolError("data commands need a positive burst length")
        if self.copyq_done is not None and cmd.kind is not Kind.READP:
            raise ProtocolError(f"{cmd.kind.value} issued inside the CopyQ/ReadP window")
        t0 = max(int(cmd.issue_cycle), self.last_issue + 1)
        k = cmd.kind
        if k is Kind.COPYQ:
            done = max(t0 + t.tCL, self.last_done + 1) + cmd.burst_len - 1
            if cmd.start_flag:
                self.copyq_done = done
        elif k is Kind.READP:
            if self.copyq_done is None:
                raise ProtocolError("ReadP without a preceding CopyQ")
            t0 = max(t0, self.copyq_done + t.tAxTh)
            done = max(t0 + t.tCL, self.last_done + 1) + cmd.burst_len - 1
            self.copyq_done = None
        elif k in (Kind.READ, Kind.WRITE):
            row = self.open_rows.get(cmd.bank)
            if row == cmd.row:
                col = t0
            else:
                col = self._activate(t0, row is not None) + t.tRCD
                self.open_rows[cmd.bank] = cmd.row
            done = max(col + t.tCL, self.last_done + 1) + cmd.burst_len - 1
        elif k is Kind.ACTIVATE:
            row = self.open_rows.get(cmd.bank)
            done = self._activate(t0, row is not None and row != cmd.row) + t.tRCD
            self.open_rows[cmd.bank] = cmd.row
        elif k is Kind.PRECHARGE:
            done = t0 + t.tRP
            self.open_rows.pop(cmd.bank, None)
        else:  # pragma: no cover
            raise ProtocolError(f"unknown command {k}")
        self.last_issue = t0
        if k in (Kind.READ, Kind.WRITE, Kind.COPYQ, Kind.READP):
            self.last_done = done
        self.history.append((cmd, t0, done))
        return done


def schedule(queues, timing: TimingConfig = TimingConfig()) -> list:
    """Completion cycles for per-channel command queues in program order."""
    out = []
    for c, q in enumerate(queues):
        s = ChannelScheduler(timing, channel=c)
        out.append([s.issue(cmd) for cmd in q])
    return out


# ---------------------------------------------------------------- vectorised multi-channel path

def _seg_cummax(x, seg):
    """Running max that restarts at every change of ``seg`` (seg sorted ascending)."""
    if x.size == 0:
        return x
    return np.maximum.accumulate(x + seg * _SEG) - seg * _SEG


class MemorySystem:
    """Array-backed state of many channels, equivalent to one ChannelScheduler each.

    ``read_batch`` schedules Read commands for all channels in one call; it
    reproduces ``ChannelScheduler.issue`` exactly (checked in the tests).
    """

    def __init__(self, channels: int, banks: int, timing: TimingConfig = TimingConfig()):
        self.t = timing
        self.channels, self.banks = channels, banks
        self.last_issue = np.full(channels, NEG_INF, dtype=np.int64)
        self.last_done = np.full(channels, NEG_INF, dtype=np.int64)
        self.open_row = np.full((channels, banks), -1, dtype=np.int64)
        self.acts = np.full((channels, 4), NEG_INF, dtype=np.int64)  # oldest first
        self.commands = 0
        self.readp_after_copyq = []  # (copyq_done, readp_done) samples for protocol checks

    def copyq_readp(self, issue, copy_beats: int, readp_beats):
        """One CopyQ then one ReadP per bank-group entry on every channel.

        ``issue`` is a scalar or per-channel array; ``readp_beats`` is a
        (channels, k) array of ReadP burst lengths.  Returns per-channel
        (copyq_done, last readp_done).
        """
        t = self.t
        issue = np.broadcast_to(np.asarray(issue, dtype=np.int64), (self.channels,))
        t0 = np.maximum(issue, self.last_issue + 1)
        cq = np.maximum(t0 + t.tCL, self.last_done + 1) + copy_beats - 1
        last_t0, last = t0, cq
        rb = np.asarray(readp_beats, dtype=np.int64).reshape(self.channels, -1)
        first = None
        for k in range(rb.shape[1]):
            t0 = np.maximum(last_t0 + 1, cq + t.tAxTh) if k == 0 else last_t0 + 1
            done = np.maximum(t0 + t.tCL, last + 1) + rb[:, k] - 1
            if k == 0:
                first = done
            last_t0, last = t0, done
        self.readp_after_copyq.append((cq.copy(), first.copy()))
        self.last_issue, self.last_done = last_t0, last
        self.commands += self.channels * (1 + rb.shape[1])
        return cq, last

    def read_batch(self, channel, bank, row, burst, issue) -> np.ndarray:
        """Schedule Reads given in per-channel program order; returns completions."""
        t = self.t
        ch = np.asarray(channel, dtype=np.int64)
        n = ch.size
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        bank = np.asarray(bank, dtype=np.int64)
        row = np.asarray(row, dtype=np.int64)
        burst = np.broadcast_to(np.asarray(burst, dtype=np.int64), (n,))
        issue = np.broadcast_to(np.asarray(issue, dtype=np.int64), (n,))
        order = np.argsort(ch, kind="stable")
        ch, bank, row, burst, issue = ch[order], bank[order], row[order], burst[order], issue[order]
        starts = np.flatnonzero(np.r_[True, ch[1:] != ch[:-1]])
        seg_len = np.diff(np.r_[starts, n])
        k = np.arange(n) - np.repeat(starts, seg_len)  # rank within channel

        # command-bus issue: t0_k = k + cummax(issue_k - k), seeded by last_issue
        base = np.where(k == 0, np.maximum(issue, self.last_issue[ch] + 1), issue - k)
        t0 = _seg_cummax(base, ch) + k

        # row-buffer state per (channel, bank)
        key = ch * self.banks + bank
        o2 = np.argsort(key, kind="stable")
        ks, rs = key[o2], row[o2]
        first = np.r_[True, ks[1:] != ks[:-1]]
        prev_row = np.empty(n, dtype=np.int64)
        prev_row[o2] = np.where(first, self.open_row.ravel()[ks], np.r_[0, rs[:-1]])
        need_act = prev_row != row
        conflict = need_act & (prev_row >= 0)

        col = t0.copy()
        ai = np.flatnonzero(need_act)
        if ai.size:
            x = t0[ai] + np.where(conflict[ai], t.tRP, 0)
            act = self._activations(ch[ai], x)
            col[ai] = act + t.tRCD
        a = col + t.tCL + burst - 1
        B = np.cumsum(burst)
        B = B - np.repeat(np.r_[0, B[:-1]][starts], seg_len)  # per-channel cumsum
        # c_k = max(a_k, c_{k-1} + b_k) unrolls to B_k + cummax(a_k - B_k); the
        # previous batch's completion seeds the first element of each channel
        seed = np.where(k == 0, self.last_done[ch] + burst, NEG_INF) - B
        done = B + _seg_cummax(np.maximum(a - B, seed), ch)

        # write back state
        ends = np.r_[starts[1:], n] - 1
        chs = ch[ends]
        self.last_issue[chs] = t0[ends]
        self.last_done[chs] = done[ends]
        last_of_key = np.r_[ks[1:] != ks[:-1], True]
        self.open_row.ravel()[ks[last_of_key]] = rs[last_of_key]
        self.commands += n
        out = np.empty(n, dtype=np.int64)
        out[order] = done
        return out

    def _activations(self, ch, x):
        """act_i = max(x_i, act_{i-1} + tRRD, act_{i-4} + tFAW) per channel, by relaxation."""
        t = self.t
        m = ch.size
        starts = np.flatnonzero(np.r_[True, ch[1:] != ch[:-1]])
        seg_len = np.diff(np.r_[starts, m])
        chs = ch[starts]
        # extended array: 4 history slots in front of every channel segment
        ext_len = m + 4 * len(starts)
        pos = np.arange(m) + 4 * np.repeat(np.arange(len(starts)) + 1, seg_len)
        hist_pos = (np.repeat(starts + 4 * np.arange(len(starts)), 4)
                    + np.tile(np.arange(4), len(starts)))
        ext = np.full(ext_len, NEG_INF, dtype=np.int64)
        ext[hist_pos] = self.acts[chs].ravel()
        fixed = np.full(ext_len, NEG_INF, dtype=np.int64)
        fixed[pos] = x
        ext[pos] = x
        live = np.zeros(ext_len, dtype=bool)
        live[pos] = True
        while True:
            cand = np.maximum(fixed, np.maximum(np.r_[NEG_INF, ext[:-1]] + t.tRRD,
                                                np.r_[np.full(4, NEG_INF), ext[:-4]] + t.tFAW))
            new = np.where(live, np.maximum(ext, cand), ext)
            if np.array_equal(new, ext):
                break
            ext = new
        act = ext[pos]
        # last four activations per channel become the new history
        for i, c in enumerate(chs):
            seg = ext[hist_pos[4 * i]: pos[starts[i] + seg_len[i] - 1] + 1]
            self.acts[c] = seg[-4:]
        return act
