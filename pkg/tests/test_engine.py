import dataclasses
import json

import numpy as np
import pytest

from sprint_sim import engine
from sprint_sim.attention_core import reference_attention
from sprint_sim.engine import (PRESETS, SimConfig, SimulationError, aggregate, buffer_fraction_config,
                               config_from_dict, run, run_detailed, run_with_baseline)
from sprint_sim.metrics import CATEGORIES, fetch_oracle_count
from sprint_sim.workload import AttentionTrace, SyntheticSpec, calibrate_threshold, generate_synthetic


def synth(s, n=None, rate=0.75, lam=0.8, seed=0, d=64):
    return generate_synthetic(SyntheticSpec(seq_len=s, embed=d, valid_len=n or s,
                                            target_prune_rate=rate, locality_strength=lam,
                                            rng_seed=seed))


@pytest.fixture(scope="module")
def small():
    return synth(96, 64, seed=7)


def test_presets_match_table():
    assert PRESETS == {"S": (1, 16384, 64, 512), "M": (2, 32768, 128, 1024), "L": (4, 65536, 256, 2048)}
    for p, (n, kv, qb, ib) in PRESETS.items():
        c = SimConfig(preset=p).corelet
        assert (c.n_corelets, c.kv_buffer_bytes, c.q_buffer_bytes, c.index_buffer_bytes) == (n, kv, qb, ib)
        assert SimConfig(preset=p).channels == 16 * n


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(mode="fast")
    with pytest.raises(ValueError):
        SimConfig(preset="S", corelet=SimConfig(preset="M").corelet)
    with pytest.raises(ValueError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        config_from_dict({"timing": {"tXYZ": 3}})
    cfg = config_from_dict({"timing": {"tAxTh": 4}, "noise": {"b_equiv": 6}}, preset="M")
    assert cfg.timing.tAxTh == 4 and cfg.noise.b_equiv == 6 and cfg.corelet.n_corelets == 2


def test_low_threshold_gives_dense_output(rng):
    s, d = 4, 64
    Q, K, V = (rng.integers(-128, 128, (s, d), dtype=np.int8) for _ in range(3))
    tr = AttentionTrace(Q, K, V, s, -2**31)
    res = run_detailed(tr, SimConfig())
    assert not res.prune.any() and res.report.prune_rate == 0.0
    dense, _ = reference_attention(Q, K, V, np.zeros((s, s), bool))
    assert np.array_equal(res.attention, dense)


def test_sprint_output_matches_reference():
    for seed in range(3):
        tr = synth(80, 50, seed=seed)
        res = run_detailed(tr, SimConfig())
        exp, _ = reference_attention(tr.q_matrix, tr.k_matrix, tr.v_matrix, res.prune,
                                     res.active_queries)
        assert np.array_equal(res.attention, exp)


def test_mask_only_halves_traffic():
    tr = synth(128, 64)
    base, _ = run(tr, SimConfig(mode="baseline", compute_output=False))
    mask, _ = run(tr, SimConfig(mode="mask_only", compute_output=False))
    assert mask.bytes_fetched * 2 == base.bytes_fetched
    assert mask.queries_processed * 2 == base.queries_processed
    assert mask.score_computations * 4 == base.score_computations


def test_pruning_only_work(small):
    base = run_detailed(small, SimConfig(mode="baseline", compute_output=False)).report
    r = run_detailed(small, SimConfig(mode="pruning_only"))
    rep = r.report
    assert rep.bytes_fetched >= base.bytes_fetched - 0  # K fully streamed, V may skip unused
    assert rep.qk_dot_products == base.qk_dot_products
    assert rep.v_dot_products == int((~r.prune).sum())
    assert rep.v_dot_products < base.v_dot_products
    exp, _ = reference_attention(small.q_matrix, small.k_matrix, small.v_matrix, r.prune)
    assert np.array_equal(r.attention, exp)


def test_values_independent_of_timing_mode(small):
    res = run_detailed(small, SimConfig())
    for preset in ("M", "L"):
        other = run_detailed(small, SimConfig(preset=preset))
        assert np.array_equal(other.attention, res.attention)
    slow = run_detailed(small, SimConfig(overlap_thresholding=False,
                                         timing=dataclasses.replace(SimConfig().timing, tCL=20)))
    assert np.array_equal(slow.attention, res.attention)
    assert slow.report.cycles_total > res.report.cycles_total


def test_mode_lattice_when_buffer_is_short():
    for seed in range(2):
        tr = synth(512, 256, seed=seed)
        b = {m: run(tr, SimConfig(mode=m, compute_output=False))[0].bytes_fetched
             for m in ("sprint", "mask_only", "baseline")}
        assert b["sprint"] <= b["mask_only"] <= b["baseline"]


def test_baseline_fetches_once_when_buffer_holds_sequence(small):
    rep, _ = run(small, SimConfig(mode="baseline", compute_output=False))
    assert rep.fetched_tokens == small.seq_len
    assert rep.bytes_fetched == 3 * small.seq_len * small.embed


def test_sprint_fetches_match_oracle_with_room(small):
    res = run_detailed(small, SimConfig(preset="L"))
    n = small.valid_len
    assert res.report.fetched_tokens == fetch_oracle_count(res.prune[:n, :n])


def test_speedup_monotone_in_prune_rate():
    tr0 = synth(384, 192, seed=1)
    n = tr0.valid_len
    sc = tr0.q_matrix[:n].astype(np.int64) @ tr0.k_matrix[:n].astype(np.int64).T
    base, _ = run(tr0, SimConfig(mode="baseline", compute_output=False))
    sp = []
    for rate in (0, 0.25, 0.5, 0.75, 0.9):
        tr = dataclasses.replace(tr0, threshold=calibrate_threshold(sc, rate))
        sp.append(base.cycles_total / run(tr, SimConfig(compute_output=False))[0].cycles_total)
    assert all(b >= a for a, b in zip(sp, sp[1:]))


def test_energy_conservation(small):
    res = run_detailed(small, SimConfig())
    e = res.report.energy_by_category
    assert set(e) == set(CATEGORIES)
    assert res.report.energy_total_fj == sum(e.values()) == res.ledger.total()
    assert all(isinstance(v, int) for v in e.values())


def test_deterministic_json(small):
    a = run(small, SimConfig(noise=dataclasses.replace(SimConfig().noise, mode="quantize_plus_gaussian",
                                                      sigma=3.0, seed=5)))[0].to_json()
    b = run(small, SimConfig(noise=dataclasses.replace(SimConfig().noise, mode="quantize_plus_gaussian",
                                                      sigma=3.0, seed=5)))[0].to_json()
    assert a == b
    assert json.loads(a)["schema_version"] == 1


def test_golden_small_trace(small):
    want = {
        "sprint": (7746, 6441917816, 57856, 420),
        "baseline": (14621, 13199646720, 18432, 96),
        "mask_only": (6685, 6778552320, 12288, 64),
        "pruning_only": (11120, 9126707200, 30144, 96),
    }
    for mode, (cyc, fj, by, tok) in want.items():
        r, _ = run(small, SimConfig(mode=mode, compute_output=False))
        assert (r.cycles_total, r.energy_total_fj, r.bytes_fetched, r.fetched_tokens) == (cyc, fj, by, tok)


def test_readp_follows_copyq(small):
    res = run_detailed(small, SimConfig())
    t = SimConfig().timing
    assert res.readp_pairs
    assert all(np.all(rp >= cq + t.tAxTh + t.tCL) for cq, rp in res.readp_pairs)
    assert len(res.readp_pairs) == small.valid_len


def test_run_with_baseline_and_aggregate(small):
    rep, _, base = run_with_baseline(small, SimConfig(compute_output=False))
    assert rep.speedup == base.cycles_total / rep.cycles_total
    layer = aggregate([rep, rep], [base, base])
    assert layer.cycles_total == 2 * rep.cycles_total
    assert layer.energy_reduction == pytest.approx(rep.energy_reduction)
    with pytest.raises(ValueError):
        aggregate([])


def test_buffer_fraction_config():
    cfg = buffer_fraction_config(SimConfig(preset="M"), 0.5, 1000, 64)
    assert cfg.preset == "custom" and cfg.corelet.capacity_per_corelet(64) == 250


def test_simulation_error_names_query_and_phase(small, monkeypatch):
    calls = {"n": 0}
    real = engine.process_query

    def boom(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("injected")
        return real(*a, **k)
    monkeypatch.setattr(engine, "process_query", boom)
    with pytest.raises(SimulationError) as ei:
        run(small, SimConfig())
    assert ei.value.query == 2 and ei.value.phase == "compute"
    assert "query 2" in str(ei.value)


def test_all_padding_trace():
    z = np.zeros((8, 4), np.int8)
    tr = AttentionTrace(z, z, z, 1, 0)
    for m in engine.MODES:
        rep, out = run(tr, SimConfig(mode=m))
        assert out.shape == (8, 4)


def test_data_movement_ratio_matches_fetch_oracle():
    tr = synth(384, 192)
    rep, _, base = run_with_baseline(tr, SimConfig(compute_output=False))
    res = run_detailed(tr, SimConfig(compute_output=False))
    n, d = tr.valid_len, tr.embed
    predicted = base.bytes_fetched / (fetch_oracle_count(res.prune[:n, :n]) * 2 * d + n * d)
    assert rep.data_movement_reduction == pytest.approx(predicted, rel=0.01)


def test_energy_reduction_grows_as_buffer_shrinks():
    tr = synth(2048, 1024)
    er = [run_with_baseline(tr, SimConfig(preset=p, compute_output=False))[0].energy_reduction
          for p in ("L", "M", "S")]
    assert er[0] < er[1] < er[2]
