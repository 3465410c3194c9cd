# The two trends the simulator is meant to show: memory traffic dominates
# once the buffer is small, and the gain from in-memory pruning by preset.
# Takes about half a minute.
# run: python demos/06_sweeps.py
import csv
import io

from sprint_sim.cli import SWEEP_COLUMNS, sweep_rows
from sprint_sim.engine import SimConfig, buffer_fraction_config, run
from sprint_sim.workload import SyntheticSpec, generate_synthetic

tr = generate_synthetic(SyntheticSpec(seq_len=2048, valid_len=1024, rng_seed=0))

# %% baseline energy share of ReRAM reads and writes versus on-chip buffer size
for f in (0.2, 0.4, 0.6, 0.8, 1.0):
    cfg = buffer_fraction_config(SimConfig(mode="baseline", compute_output=False), f, 2048, 64)
    print("buffer %3d%% of K/V  memory share %.2f" % (100 * f, run(tr, cfg)[0].memory_energy_share()))

# %% presets x modes, the same rows `sprint-sim sweep` writes
rows = sweep_rows([("synth2048", tr)], ["S", "M", "L"], ["sprint", "baseline"], SimConfig())
buf = io.StringIO()
w = csv.DictWriter(buf, fieldnames=["preset", "mode", "cycles", "energy_reduction", "speedup"],
                   extrasaction="ignore")
w.writeheader()
w.writerows(rows)
print(buf.getvalue())
print(len(SWEEP_COLUMNS), "columns in the full CSV")
