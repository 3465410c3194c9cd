# On-chip side: token interleaving across CORELETs, the 2D padding mask,
# and the timing of one query once its keys are on chip.
# run: python demos/04_corelets.py
import numpy as np

from sprint_sim.corelet import (BufferState, CoreletConfig, PipelineState, apply_2d_mask,
                                imbalance_ratio, process_query, sequential_blocks, token_interleave)
from sprint_sim.memctrl import first_query_bootstrap
from sprint_sim.workload import AttentionTrace, markov_prune_patterns

# clustered unpruned runs along the key axis
P = markov_prune_patterns(200, 1024, 0.75, seed=0)
for n in (2, 4):
    a = imbalance_ratio(P, token_interleave(1024, n), n)
    b = imbalance_ratio(P, sequential_blocks(1024, n), n)
    print("%d CORELETs  interleaved %.3f  blocks %.3f (empty CORELET events %d)" % (n, a.ratio, b.ratio, b.empty_events))

# %% 2D masking skips padded rows and columns
z = np.zeros((128, 64), np.int8)
m = apply_2d_mask(AttentionTrace(z, z, z, valid_len=16, threshold=0))
print("score computations with mask", m.score_computations, "without", 128 * 128)

# %% one query: 60 unpruned keys, all fetched, arriving one every 4 cycles
rng = np.random.default_rng(0)
K, V = (rng.integers(-128, 128, (256, 64), dtype=np.int8) for _ in range(2))
q = rng.integers(-128, 128, 64, dtype=np.int8)
prune = np.ones(256, bool)
prune[rng.choice(256, 60, replace=False)] = False
cfg = CoreletConfig(n_corelets=4, kv_buffer_bytes=65536)
buf = BufferState(256, token_interleave(256, 4), cfg.capacity_per_corelet(64))
mem_req, loc = first_query_bootstrap(prune)
arrive = np.zeros(256, np.int64)
arrive[np.flatnonzero(~prune)] = 4 * np.arange(60)
r = process_query(q, K, V, prune, buf, mem_req, loc, (arrive, arrive + 2), 0, PipelineState(), cfg)
print("QK done %d, softmax done %d, V done %d" % (r.timing.qk_end, r.timing.softmax_end, r.timing.vpu_end))
print("per-CORELET work", r.timing.softmax_counts, " resident now", buf.resident.sum())
