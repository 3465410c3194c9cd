# Synthetic attention traces, the binary trace file, and how much adjacent
# queries share their unpruned keys compared with chance.
# run: python demos/01_traces_and_locality.py
import tempfile
from pathlib import Path

import numpy as np

from sprint_sim.metrics import empirical_overlap, expected_overlap
from sprint_sim.workload import SyntheticSpec, generate_synthetic, load_trace, measured_prune_rate, save_trace

# %% a 2048-token head, half of it padding, 75% of the valid scores below threshold
spec = SyntheticSpec(seq_len=2048, embed=64, valid_len=1024, target_prune_rate=0.75,
                     locality_strength=0.8, rng_seed=0)
tr = generate_synthetic(spec)
print("shape", tr.q_matrix.shape, "valid", tr.valid_len, "threshold", tr.threshold)
print("exact prune rate %.3f" % measured_prune_rate(tr))

# %% round trip through the file format (22-byte header, then Q, K, V as int8)
with tempfile.TemporaryDirectory() as d:
    p = Path(d) / "head.sprt"
    save_trace(tr, p)
    back = load_trace(p)
    print("bytes on disk", p.stat().st_size, "identical", np.array_equal(back.k_matrix, tr.k_matrix))

# %% overlap of unpruned sets between q_t and q_t+1
for lam in (0.0, 0.5, 0.8, 1.0):
    t = generate_synthetic(SyntheticSpec(seq_len=512, valid_len=512, locality_strength=lam, rng_seed=1))
    P = (t.q_matrix.astype(np.int64) @ t.k_matrix.astype(np.int64).T) < t.threshold
    ov = empirical_overlap(P)
    chance = expected_overlap(512, int(round(ov.mean_unpruned)))
    print("locality %.1f  overlap %.1f keys (%.0f%%), chance %.1f" % (lam, ov.mean, 100 * ov.fraction, chance))
