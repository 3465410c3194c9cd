# Keys live in ReRAM split into 4-bit halves; the MSB halves take part in an
# analog dot product whose result is compared against the threshold in place.
# run: python demos/02_inmemory_thresholding.py
import numpy as np

from sprint_sim.attention_core import quantize_scores
from sprint_sim.metrics import EnergyLedger
from sprint_sim.reram import (NoiseModel, ReramLayout, analog_compare, calibration_range,
                              inmem_score, msb_scores, msb_threshold, split_msb_lsb, store_keys)
from sprint_sim.workload import SyntheticSpec, generate_synthetic

tr = generate_synthetic(SyntheticSpec(seq_len=512, valid_len=512, rng_seed=3))
K, Q = tr.k_matrix, tr.q_matrix

# %% x == 16*msb + lsb with msb signed and lsb unsigned
msb, lsb = split_msb_lsb(K)
print("msb range", msb.min(), msb.max(), " lsb range", lsb.min(), lsb.max())

# %% placement: token j on channel j % 16, dense columns within a tile
led = EnergyLedger()
stored = store_keys(K, ReramLayout(channels=16), led)
print("token 0..5 channels", stored.channel[:6], " columns", stored.column[:6])
print("write energy %.1f nJ" % (led.total("reram_write") / 1e6))

# %% one query: approximate scores, then the comparator bank
qm = split_msb_lsb(Q[0])[0]
exact_msb = msb_scores(qm, stored.msb)
approx = inmem_score(qm, stored, NoiseModel(b_equiv=5), led, calib_range=calibration_range(exact_msb))
bits = analog_compare(approx, msb_threshold(tr.threshold), led, stored)
full = Q[0].astype(np.int64) @ K.T.astype(np.int64)
print("pruned in memory %d / %d, pruned by exact score %d" % (bits.sum(), bits.size, (full < tr.threshold).sum()))
print("kept although exact score is below threshold: %d" % (~bits & (full < tr.threshold)).sum())

# %% fewer equivalent bits, more wrong decisions near the threshold
# (flat steps: a finer grid only helps once it splits the bin holding the threshold)
rng = np.random.default_rng(0)
S = np.rint(rng.normal(0, 1500, 100_000)).astype(np.int64)
lo, hi = int(S.min()), int(S.max())
for b in range(2, 9):
    wrong = (quantize_scores(S, b, lo, hi) < 1234) != (S < 1234)
    print("b=%d  disagreements %5d" % (b, wrong.sum()))
