# The memory-controller front end: locality detection between consecutive
# prune vectors, per-channel request lists, and the CopyQ/ReadP commands.
# run: python demos/03_memory_controller.py
import numpy as np

from sprint_sim.memctrl import (ChannelScheduler, Kind, MemoryCommand, TimingConfig,
                                first_query_bootstrap, generate_key_indices, generate_requests,
                                sld_compute)

prev = np.array([0, 1, 1, 0, 0, 1, 0, 1], bool)   # 1 = pruned
curr = np.array([0, 0, 1, 1, 0, 0, 1, 1], bool)
mem_req, locality = sld_compute(prev, curr)
print("fetch", np.flatnonzero(mem_req), " reuse", np.flatnonzero(locality))
print("first query fetches", np.flatnonzero(first_query_bootstrap(curr)[0]))

# %% MRG / KIG: one list per channel, addresses step by the channel count
print("requests per channel", [r.tolist() for r in generate_requests(mem_req, 2)])
print("key indices per channel", [r.tolist() for r in generate_key_indices(locality, 2)])

# %% CopyQ, then ReadP once the in-memory compare has had tAxTh cycles
t = TimingConfig()
ch = ChannelScheduler(t)
cq = ch.issue(MemoryCommand(Kind.COPYQ, burst_len=1))
rp = ch.issue(MemoryCommand(Kind.READP, burst_len=1))
print("CopyQ done at %d, ReadP done at %d (= tCL + tAxTh + tCL)" % (cq, rp))

# %% row-buffer hit versus conflict
ch = ChannelScheduler(t)
ch.issue(MemoryCommand(Kind.READ, bank=0, row=3))
hit = ch.issue(MemoryCommand(Kind.READ, bank=0, row=3, issue_cycle=100)) - 100
miss = ch.issue(MemoryCommand(Kind.READ, bank=0, row=4, issue_cycle=200)) - 200
print("open-row hit %d cycles, row conflict %d cycles" % (hit, miss))
