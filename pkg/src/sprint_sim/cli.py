"""``sprint-sim`` command line: run, gen and sweep."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine import MODES, PRESETS, aggregate, buffer_fraction_config, config_from_dict, run
from .metrics import CATEGORIES, REPORT_SCHEMA_VERSION, attach_comparison
from .workload import SyntheticSpec, TraceFormatError, generate_synthetic, load_trace, save_trace

SWEEP_COLUMNS = (
    ["trace", "preset", "mode", "buffer_fraction", "cycles"]
    + [f"energy_fj_{c}" for c in CATEGORIES]
    + ["energy_fj_total", "bytes_fetched", "bytes_fetched_baseline", "speedup",
       "energy_reduction", "data_movement_reduction", "memory_energy_share"]
)


def _mode(s: str) -> str:
    m = s.replace("-", "_")
    if m not in MODES:
        raise argparse.ArgumentTypeError(f"mode must be one of {[x.replace('_', '-') for x in MODES]}")
    return m


def _unit(name):
    def parse(s):
        v = float(s)
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError(f"{name} must be in [0, 1], got {s}")
        return v
    return parse


def _csv_list(kind):
    def parse(s):
        return [kind(x) for x in s.split(",") if x]
    return parse


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SPRINT_SIM_THREADS", "1")))
    except ValueError:
        return 1


def _load_config(path, preset, mode):
    d = json.loads(Path(path).read_text()) if path else {}
    return config_from_dict(d, preset=preset, mode=mode)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sprint-sim", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate one or more attention-head traces")
    r.add_argument("--trace", action="append", required=True, help="trace file (repeatable)")
    r.add_argument("--preset", choices=[*PRESETS, "custom"], default=None)
    r.add_argument("--mode", type=_mode, default=None)
    r.add_argument("--config", help="JSON overrides mirroring SimConfig fields")
    r.add_argument("--out", help="report JSON path (default: stdout)")
    r.add_argument("--attention-out", help="write the int16 attention output as .npy")
    r.add_argument("--no-baseline", action="store_true", help="skip the baseline comparison run")

    g = sub.add_parser("gen", help="write a synthetic trace")
    g.add_argument("--seq", type=int, default=2048)
    g.add_argument("--embed", type=int, default=64)
    g.add_argument("--prune-rate", type=_unit("prune-rate"), default=0.75)
    g.add_argument("--padding", type=_unit("padding"), default=0.5)
    g.add_argument("--locality", type=_unit("locality"), default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    w = sub.add_parser("sweep", help="presets x modes x traces, one CSV row per cell")
    w.add_argument("--trace", action="append", required=True)
    w.add_argument("--presets", type=_csv_list(str), default=["S", "M", "L"])
    w.add_argument("--modes", type=_csv_list(_mode), default=["sprint", "baseline"])
    w.add_argument("--buffer-fractions", type=_csv_list(float), default=None,
                   help="K/V buffer sizes as fractions of the sequence length")
    w.add_argument("--config")
    w.add_argument("--out", help="CSV path (default: stdout)")
    return p


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.preset, args.mode)
    reports, bases, outs = [], [], []
    for path in args.trace:
        tr = load_trace(path)
        rep, out = run(tr, replace(cfg, compute_output=bool(args.attention_out)))
        if not args.no_baseline:
            base, _ = run(tr, replace(cfg, mode="baseline", compute_output=False))
            attach_comparison(rep, base)
            bases.append(base)
        rep.settings["trace"] = Path(path).name
        reports.append(rep)
        outs.append(out)
    if len(reports) == 1:
        doc = reports[0].to_dict()
    else:
        layer = aggregate(reports, bases if bases else None)
        doc = {"schema_version": REPORT_SCHEMA_VERSION, "heads": [r.to_dict() for r in reports],
               "layer": layer.to_dict()}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.attention_out:
        if len({o.shape for o in outs}) != 1:
            raise ValueError("--attention-out needs traces of equal shape")
        np.save(args.attention_out, outs[0] if len(outs) == 1 else np.stack(outs))
    return 0


def cmd_gen(args) -> int:
    valid = max(1, round(args.seq * (1.0 - args.padding)))
    spec = SyntheticSpec(seq_len=args.seq, embed=args.embed, valid_len=min(valid, args.seq),
                         target_prune_rate=args.prune_rate, locality_strength=args.locality,
                         rng_seed=args.seed)
    save_trace(generate_synthetic(spec), args.out)
    return 0


def sweep_rows(traces, presets, modes, base_cfg, fractions=None, threads=1):
    """Rows of the sweep table, ordered by (trace, fraction, preset, mode)."""
    cells, baseline_keys = [], []
    for ti, (name, tr) in enumerate(traces):
        for f in (fractions or [None]):
            for p in presets:
                cfg = replace(config_from_dict({}, preset=p, mode="sprint"),
                              overlap_thresholding=base_cfg.overlap_thresholding,
                              timing=base_cfg.timing, energy=base_cfg.energy, noise=base_cfg.noise,
                              compute_output=False)
                if f is not None:
                    cfg = buffer_fraction_config(cfg, f, tr.seq_len, tr.embed)
                baseline_keys.append((ti, f, p, cfg))
                for m in modes:
                    cells.append((name, ti, f, p, replace(cfg, mode=m)))

    def go(job):
        return run(traces[job[0]][1], job[1])[0]

    with ThreadPoolExecutor(max_workers=threads) as ex:
        base = list(ex.map(go, [(ti, replace(cfg, mode="baseline")) for ti, _, _, cfg in baseline_keys]))
        reps = list(ex.map(go, [(ti, cfg) for _, ti, _, _, cfg in cells]))
    base_of = {(ti, f, p): b for (ti, f, p, _), b in zip(baseline_keys, base)}
    rows = []
    for (name, ti, f, p, cfg), rep in zip(cells, reps):
        attach_comparison(rep, base_of[(ti, f, p)])
        row = {"trace": name, "preset": p, "mode": cfg.mode.replace("_", "-"),
               "buffer_fraction": f, "cycles": rep.cycles_total}
        for c in CATEGORIES:
            row[f"energy_fj_{c}"] = rep.energy_by_category[c]
        row.update(energy_fj_total=rep.energy_total_fj, bytes_fetched=rep.bytes_fetched,
                   bytes_fetched_baseline=rep.bytes_fetched_baseline, speedup=rep.speedup,
                   energy_reduction=rep.energy_reduction,
                   data_movement_reduction=rep.data_movement_reduction,
                   memory_energy_share=rep.memory_energy_share())
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, None, None)
    for p in args.presets:
        if p not in PRESETS:
            raise ValueError(f"unknown preset {p!r}")
    for f in args.buffer_fractions or []:
        if not 0 < f <= 1:
            raise ValueError(f"buffer fraction {f} outside (0, 1]")
    traces = [(Path(t).name, load_trace(t)) for t in args.trace]
    rows = sweep_rows(traces, args.presets, args.modes, cfg, args.buffer_fractions, _threads())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "gen": cmd_gen, "sweep": cmd_sweep}[args.cmd]
    try:
        return handler(args)
    except (OSError, ValueError, TraceFormatError, json.JSONDecodeError) as exc:
        print(f"sprint-sim {args.cmd}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
