# Whole-head runs in all four modes on one trace, with the ratio against
# the baseline and where the energy goes.
# run: python demos/05_end_to_end.py
import numpy as np

from sprint_sim.attention_core import reference_attention
from sprint_sim.engine import MODES, SimConfig, run_detailed
from sprint_sim.metrics import CATEGORIES, compare
from sprint_sim.workload import SyntheticSpec, generate_synthetic

tr = generate_synthetic(SyntheticSpec(seq_len=1024, valid_len=512, rng_seed=0))
res = {m: run_detailed(tr, SimConfig(preset="S", mode=m)) for m in MODES}
base = res["baseline"].report

print("%-13s %9s %8s %11s %8s %8s" % ("mode", "cycles", "uJ", "MB fetched", "speedup", "energy"))
for m, r in res.items():
    c = compare(r.report, base)
    print("%-13s %9d %8.2f %11.3f %8.2f %8.2f" % (m, r.report.cycles_total, r.report.energy_total_fj / 1e9,
                                                 r.report.bytes_fetched / 1e6, c.speedup, c.energy_reduction))

# %% outputs are the fixed-point reference under each mode's own prune vectors
sp = res["sprint"]
ref, _ = reference_attention(tr.q_matrix, tr.k_matrix, tr.v_matrix, sp.prune, sp.active_queries)
print("sprint output bit-exact:", np.array_equal(ref, sp.attention))
print("prune rate %.3f, overlap %.1f%% of unpruned keys" % (sp.report.prune_rate,
                                                               100 * sp.report.empirical_overlap_fraction))

# %% energy breakdown
for name in ("sprint", "baseline"):
    e = res[name].report.energy_by_category
    tot = sum(e.values())
    print(name, " ".join("%s %.0f%%" % (c, 100 * e[c] / tot) for c in CATEGORIES if e[c] / tot > 0.01))
