"""Command line front end for the training and benchmark workflows.

Subcommands read one TOML config each and write their artifacts (per-sample
CSV or JSON plus a summary) into the output directory, printing a compact
table to stdout. Tables are derived from the persisted per-sample files
only, so every printed number can be recomputed offline.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import (
    ConfigError,
    load_config,
    protocol_from_config,
    require,
    smoother_from_table,
    train_config_from,
)
from .optimize import train
from .problem import save_field, save_operator_coo
from .spectral import improvement


def _writable_dir(path_str: str) -> Path:
    path = Path(path_str)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_theta(path) -> list:
    with open(path) as fh:
        return json.load(fh)["theta"]


def _entries(data: dict, out: Path):
    raw = data.get("entries")
    if not raw:
        raise ConfigError("missing required section [[entries]]")
    entries = []
    for table in raw:
        label = table.get("label")
        if label is None:
            raise ConfigError("every [[entries]] table needs a label")
        theta = None
        if "theta_file" in table:
            theta = _load_theta(Path(table["theta_file"]))
        entries.append((label, smoother_from_table(table, theta)))
    return entries


def cmd_generate(args) -> int:
    data = load_config(args.config)
    protocol = protocol_from_config(data, seed_override=args.seed)
    out = _writable_dir(args.out)
    for i, seed, A in protocol.iter_samples():
        fld = protocol.sample_field(i, seed)
        save_field(fld, out / f"field_{i:04d}.csv")
        if args.operators:
            save_operator_coo(A, out / f"operator_{i:04d}.coo")
    print(f"wrote {protocol.samples} field(s) to {out}")
    return 0


def cmd_train(args) -> int:
    data = load_config(args.config)
    cfg = train_config_from(data, seed_override=args.seed)
    theta0 = np.asarray(data.get("train", {}).get("theta0", [1.0] * cfg.k),
                        dtype=float)
    theta, trace = train(theta0, cfg)
    out = _writable_dir(args.out)
    trace.to_csv(out / "trace.csv")
    payload = {
        "theta": [float(t) for t in theta],
        "smoother": cfg.smoother_kind,
        "m": cfg.m,
        "best_epoch": trace.best_epoch,
    }
    with open(out / "theta.json", "w") as fh:
        json.dump(payload, fh, indent=1)
    pretty = ", ".join(f"{t:.4f}" for t in theta)
    print(f"trained {cfg.smoother_kind} weights on m={cfg.m}: ({pretty})")
    print(f"artifacts: {out / 'theta.json'}, {out / 'trace.csv'}")
    return 0


def cmd_sweep(args) -> int:
    data = load_config(args.config)
    protocol = protocol_from_config(data, seed_override=args.seed)
    start = float(require(data, "sweep", "start"))
    stop = float(require(data, "sweep", "stop"))
    step = float(require(data, "sweep", "step"))
    kind = data.get("smoother", {}).get("type", "jacobi")
    omegas = np.round(np.arange(start, stop + step / 2, step), 10)
    rows = bench.run_omega_sweep(protocol, omegas, kind=kind,
                                 threads=args.threads)
    out = _writable_dir(args.out)
    bench.write_rate_rows(rows, out / "sweep_rates.csv")

    subsets = ["all"]
    if protocol.aniso_fraction not in (0.0, 1.0):
        subsets += ["iso", "aniso"]
    summaries = {s: bench.sweep_summary(rows, omegas, kind=kind, subset=s)
                 for s in subsets}
    print(f"{'omega':>8} " + " ".join(f"{s:>12}" for s in subsets))
    for idx, omega in enumerate(omegas):
        cells = []
        for s in subsets:
            _, rate, diverged = summaries[s][idx]
            cells.append("diverged" if diverged else f"{rate:.4f}")
        print(f"{omega:8.4f} " + " ".join(f"{c:>12}" for c in cells))
    best = {s: bench.best_sweep_point(summaries[s]) for s in subsets}
    for s in subsets:
        omega, rate, _ = best[s]
        print(f"best ({s}): omega={omega:.4f} rate={rate:.4f}")
    with open(out / "sweep_summary.json", "w") as fh:
        json.dump(
            {
                s: {
                    "points": [
                        {"omega": o, "rate": r, "diverged": d}
                        for o, r, d in summaries[s]
                    ],
                    "best_omega": best[s][0],
                    "best_rate": best[s][1],
                }
                for s in subsets
            },
            fh, indent=1,
        )
    return 0


def cmd_bench(args) -> int:
    data = load_config(args.config)
    protocol = protocol_from_config(data, seed_override=args.seed)
    out = _writable_dir(args.out)
    entries = _entries(data, out)
    rows, reports = bench.run_rate_table(protocol, entries,
                                         threads=args.threads,
                                         keep_reports=True)
    bench.write_rate_rows(rows, out / "bench_rates.csv")
    bench.write_residual_history(reports, out / "bench_residuals.csv")

    by_label = bench.rates_by_label(rows)
    baseline_label = entries[0][0]
    baseline = by_label[baseline_label]
    summary = {}
    header = f"{'label':<28}{'mean':>9}{'gmean':>9}{'std':>9}{'win%':>8}{'iters%':>9}"
    print(header)
    for label, _ in entries:
        rates = by_label[label]
        ok = np.isfinite(rates) & (rates > 0) & (rates < 1)
        entry = {"diverged": int(np.sum(~ok)), "samples": len(rates)}
        if np.all(ok):
            st = bench.stats(rates)
            win = bench.win_percentage(rates, baseline)
            iters = (improvement(st.mean, float(np.mean(baseline)))
                     if label != baseline_label else 100.0)
            entry.update(mean=st.mean, gmean=st.gmean, std=st.std,
                         win_vs_baseline=win, iters_vs_baseline=iters)
            print(f"{label:<28}{st.mean:>9.4f}{st.gmean:>9.4f}{st.std:>9.4f}"
                  f"{win:>8.2f}{iters:>9.2f}")
        else:
            print(f"{label:<28}{'diverged on ' + str(entry['diverged']):>44}")
        summary[label] = entry
    with open(out / "bench_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return 0


def cmd_spectrum(args) -> int:
    data = load_config(args.config)
    protocol = protocol_from_config(data, seed_override=args.seed)
    alphas = data.get("spectrum", {}).get("alphas", [10])
    out = _writable_dir(args.out)
    entries = _entries(data, out)
    rows = bench.run_spectrum(protocol, entries, alphas=alphas,
                              threads=args.threads)
    bench.write_spectrum_rows(rows, out / "spectrum.json")

    summary = {}
    for label, _ in entries:
        sel = [r for r in rows if r.label == label]
        rho = np.array([r.rho for r in sel])
        entry = {
            "rho_mean": float(rho.mean()),
            "rho_std": float(rho.std(ddof=1)) if len(rho) > 1 else 0.0,
        }
        for a in alphas:
            gf = np.array([r.gelfand[int(a)] for r in sel])
            entry[f"gelfand_{a}_mean"] = float(gf.mean())
            entry[f"gelfand_{a}_std"] = (
                float(gf.std(ddof=1)) if len(gf) > 1 else 0.0
            )
        summary[label] = entry
        print(f"{label}: rho {entry['rho_mean']:.4f} "
              + " ".join(f"gelfand[{a}] {entry[f'gelfand_{a}_mean']:.4f}"
                         for a in alphas))
    if len(entries) == 2:
        a = [r.rho for r in rows if r.label == entries[0][0]]
        b = [r.rho for r in rows if r.label == entries[1][0]]
        win = bench.win_percentage(a, b)
        summary["win_rho_first_vs_second"] = win
        print(f"rho wins, {entries[0][0]} vs {entries[1][0]}: {win:.2f}%")
    with open(out / "spectrum_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgtune",
        description="Multigrid relaxation tuning on random-coefficient "
                    "diffusion problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("train", cmd_train, "fit relaxation weights to the spectral loss"),
        ("bench", cmd_bench, "measured-rate comparison table"),
        ("sweep", cmd_sweep, "damping factor sweep"),
        ("spectrum", cmd_spectrum, "per-sample spectral radius and bounds"),
        ("generate", cmd_generate, "write sampled coefficient fields"),
    ]
    for name, fn, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads across samples")
        p.add_argument("--out", default="out", help="output directory")
        if name == "generate":
            p.add_argument("--operators", action="store_true",
                           help="also export assembled operators")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
