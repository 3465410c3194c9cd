import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from sprint_sim.cli import SWEEP_COLUMNS, main
from sprint_sim.metrics import CATEGORIES
from sprint_sim.workload import load_trace, measured_prune_rate


@pytest.fixture(scope="module")
def trace_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("t") / "t.sprt"
    assert main(["gen", "--seq", "96", "--padding", "0.25", "--seed", "3", "--out", str(p)]) == 0
    return p


def test_gen_defaults_loadable(tmp_path):
    p = tmp_path / "d.sprt"
    assert main(["gen", "--seq", "256", "--out", str(p)]) == 0
    tr = load_trace(p)
    assert tr.seq_len == 256 and tr.embed == 64 and tr.valid_len == 128
    assert abs(measured_prune_rate(tr) - 0.75) <= 0.03


def test_gen_rejects_bad_rate(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["gen", "--prune-rate", "1.5", "--out", str(tmp_path / "x")])
    assert e.value.code == 2
    assert "prune-rate" in capsys.readouterr().err


def test_run_missing_trace_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["run"])
    assert e.value.code == 2


def test_run_report_schema(trace_file, tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "--trace", str(trace_file), "--preset", "M", "--mode", "sprint",
                 "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert set(d["energy_by_category"]) == set(CATEGORIES)
    assert d["preset"] == "M" and d["mode"] == "sprint" and d["speedup"] > 0
    assert d["energy_total_fj"] == sum(d["energy_by_category"].values())


def test_run_twice_byte_identical(trace_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["run", "--trace", str(trace_file), "--mode", "pruning-only", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_run_attention_dump_and_multi_head(trace_file, tmp_path):
    out, att = tmp_path / "r.json", tmp_path / "a.npy"
    assert main(["run", "--trace", str(trace_file), "--trace", str(trace_file), "--out", str(out),
                 "--attention-out", str(att)]) == 0
    d = json.loads(out.read_text())
    assert len(d["heads"]) == 2 and d["layer"]["settings"]["heads"] == 2
    a = np.load(att)
    assert a.shape == (2, 96, 64) and a.dtype == np.int16


def test_run_config_errors(trace_file, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"timing": {"bogus": 1}}))
    assert main(["run", "--trace", str(trace_file), "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err
    cfg.write_text(json.dumps({"timing": {"tAxTh": 4}, "noise": {"b_equiv": 6}}))
    assert main(["run", "--trace", str(trace_file), "--config", str(cfg), "--no-baseline",
                 "--out", str(tmp_path / "o.json")]) == 0
    assert main(["run", "--trace", str(tmp_path / "missing.sprt")]) == 1
    bad = tmp_path / "bad.sprt"
    bad.write_bytes(b"NOPE" + bytes(30))
    assert main(["run", "--trace", str(bad)]) == 1


def test_sweep_rows_and_columns(trace_file, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--trace", str(trace_file), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 6
    assert list(rows[0]) == SWEEP_COLUMNS
    assert [(r["preset"], r["mode"]) for r in rows] == [
        (p, m) for p in "SML" for m in ("sprint", "baseline")]
    base_rows = [r for r in rows if r["mode"] == "baseline"]
    assert all(float(r["speedup"]) == 1.0 for r in base_rows)


def test_sweep_threads_same_output(trace_file, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep", "--trace", str(trace_file), "--modes", "sprint,mask-only",
            "--buffer-fractions", "0.5,1.0"]
    main(args + ["--out", str(a)])
    monkeypatch.setenv("SPRINT_SIM_THREADS", "4")
    main(args + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 2 * 3 * 2


def test_sweep_bad_preset(trace_file):
    assert main(["sweep", "--trace", str(trace_file), "--presets", "XL"]) == 1


def test_console_entry_point(trace_file):
    r = subprocess.run([sys.executable, "-m", "sprint_sim", "run", "--trace", str(trace_file),
                        "--no-baseline"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["mode"] == "sprint"
