"""Command-line entry point: synth | solve | bench | report.

Every command writes a ``manifest.json`` into its output location before any
long computation starts; the manifest records the command, the merged
configuration snapshot (CLI flag > config file > built-in default), seeds,
paths, tool version, and a timestamp, and suffices to reproduce the run.
Diagnostics go to standard error; data goes to files or standard output.
The environment variable ``EBGMCR_THREADS`` caps benchmark worker threads.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baselines import mcr_als_solve, nmf_solve, rank_search
from .datamodel import Dataset, load_dataset, save_dataset
from .metrics import RunRecord, read_run_records, write_run_records
from .solver import (
    DEFAULT_BANDS,
    AblationToggles,
    CheckpointBank,
    DivergenceError,
    OptimizerConfig,
    SolverConfig,
    fit,
)
from .synthgen import SynthConfig, generate_dataset


def _eprint(*args) -> None:
    print(*args, file=sys.stderr)


def _write_manifest(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = dict(payload)
    payload["tool_version"] = __version__
    payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _parse_snr(text: Optional[str]) -> Optional[float]:
    if text is None or text.lower() == "none":
        return None
    if text.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        n_components=args.components,
        m_samples=args.samples,
        d=args.channels,
        snr_db=_parse_snr(args.snr_db),
        seed=args.seed,
    )
    _write_manifest(
        args.out,
        {
            "command": "synth",
            "config": dataclasses.asdict(cfg),
            "seed": args.seed,
            "out": args.out,
        },
    )
    dataset = generate_dataset(cfg)
    save_dataset(dataset, args.out)
    _eprint(f"wrote dataset: {dataset.m_samples} x {dataset.d} to {args.out}")
    return 0


def _merge_solver_config(dataset: Dataset, args: argparse.Namespace) -> SolverConfig:
    """Config precedence: CLI flag > config file > built-in default."""
    overrides: dict = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    opt = OptimizerConfig(**overrides.pop("optimizer", {}))
    toggle_over = overrides.pop("toggles", {})
    if args.no_sgld:
        toggle_over["sgld"] = False
    if args.no_usage_cost:
        toggle_over["usage_cost"] = False
    if args.no_min_energy:
        toggle_over["min_energy"] = False
    if args.no_ambiguity:
        toggle_over["ambiguity"] = False
    toggles = AblationToggles(**toggle_over)
    overrides["d"] = dataset.d
    if args.pool is not None:
        overrides["pool_size"] = args.pool
    elif "pool_size" not in overrides:
        overrides["pool_size"] = 1024
    if "bands" in overrides:
        overrides["bands"] = tuple(tuple(b) for b in overrides["bands"])
    return SolverConfig(optimizer=opt, toggles=toggles, **overrides)


def _serialize_bank(bank: CheckpointBank, out_dir: str) -> None:
    ck_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    for (lo, hi), entry in bank.entries.items():
        if entry is None:
            continue
        tree = {
            "band": [lo, hi],
            "usage": entry.usage,
            "r2": entry.r2,
            "epoch": entry.epoch,
            "metrics": entry.metrics,
            "params": {
                "component_params": entry.params["component_params"].tolist(),
                "gate": {k: v.tolist() for k, v in entry.params["gate"].items()},
                "conc": {k: v.tolist() for k, v in entry.params["conc"].items()},
                "tau_g": entry.params["tau_g"],
            },
        }
        name = f"band_{lo:g}-{hi:g}.json"
        with open(os.path.join(ck_dir, name), "w") as fh:
            json.dump(tree, fh)


def _write_report_csv(bank: CheckpointBank, out_dir: str) -> None:
    path = os.path.join(out_dir, "report.csv")
    cols = (
        "epoch",
        "r2",
        "mse",
        "nmse",
        "usage",
        "active_count",
        "mean_sel_energy",
        "lambda",
        "tau_g",
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in bank.report:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


def cmd_solve(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    cfg = _merge_solver_config(dataset, args)
    _write_manifest(
        args.out,
        {
            "command": "solve",
            "config": dataclasses.asdict(cfg),
            "seed": args.seed,
            "data": args.data,
            "out": args.out,
        },
    )
    try:
        bank = fit(cfg, dataset, args.seed)
    except DivergenceError as exc:
        diag = os.path.join(args.out, "divergence.json")
        with open(diag, "w") as fh:
            json.dump(dataclasses.asdict(exc.breakdown), fh, indent=2)
        _eprint(f"training diverged; diagnostic state at {diag}")
        return 1
    _serialize_bank(bank, args.out)
    _write_report_csv(bank, args.out)
    with open(os.path.join(args.out, "result.json"), "w") as fh:
        json.dump(
            {
                "stop_reason": bank.stop_reason,
                "epochs_run": bank.epochs_run,
                "e_init": bank.e_init,
                "e_star": bank.e_star,
                "bands": {
                    f"{lo:g}-{hi:g}": (
                        None
                        if e is None
                        else {"usage": e.usage, "r2": e.r2, "epoch": e.epoch}
                    )
                    for (lo, hi), e in bank.entries.items()
                },
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(bank.summary())
    print(f"stopped: {bank.stop_reason} after {bank.epochs_run} epochs")
    return 0


def _bench_one_baseline(
    method: str, mixtures: np.ndarray, c_star: int, target_r2: float, run_seed: int
) -> tuple[float, int, bool]:
    base = nmf_solve if method == "nmf" else mcr_als_solve

    def solve(D: np.ndarray, rank: int):
        return base(D, rank, seed=run_seed * 1000 + rank)

    outcome = rank_search(solve, mixtures, c_star, target_r2)
    return outcome.r2_best, outcome.c_selected, outcome.success


def cmd_bench(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    gt = dataset.ground_truth
    if gt is None:
        _eprint("bench requires a dataset with ground truth (true component count unknown)")
        return 1
    c_star = gt.components.n
    mult = dataset.m_samples // max(c_star, 1)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(
        out_dir,
        {
            "command": "bench",
            "method": args.method,
            "data": args.data,
            "target_r2": args.target_r2,
            "runs": args.runs,
            "seed": args.seed,
            "out": args.out,
        },
    )
    records: list[RunRecord] = []
    if args.method in ("nmf", "mcr-als"):
        workers = int(os.environ.get("EBGMCR_THREADS", str(os.cpu_count() or 1)))

        def one(i: int) -> RunRecord:
            run_seed = args.seed + i
            start = time.perf_counter()
            r2, ec, success = _bench_one_baseline(
                args.method, dataset.mixtures, c_star, args.target_r2, run_seed
            )
            wall = (time.perf_counter() - start) * 1e3
            return RunRecord(
                method=args.method,
                n_true=c_star,
                mult=mult,
                snr_db=gt.snr_db,
                r2=r2,
                estimated_count=ec,
                success=success,
                seed=run_seed,
                wall_ms=wall,
            )

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            records = list(pool.map(one, range(args.runs)))
    elif args.method == "ebgmcr":
        if args.runs > 1:
            _eprint(f"note: {args.runs} sequential solver replicates; this may take a while")
        for i in range(args.runs):
            run_seed = args.seed + i
            cfg = _merge_solver_config(dataset, args)
            start = time.perf_counter()
            bank = fit(cfg, dataset, run_seed)
            wall = (time.perf_counter() - start) * 1e3
            entry = bank.best_at_least(args.target_r2)
            if entry is not None:
                r2, ec, success = entry.r2, entry.usage, True
            else:
                populated = list(bank.populated().values())
                if populated:
                    best = max(populated, key=lambda e: e.r2)
                    r2, ec, success = best.r2, best.usage, best.r2 >= args.target_r2
                else:
                    final = bank.report[-1] if bank.report else {"r2": float("-inf"), "active_count": 0}
                    r2, ec, success = final["r2"], final["active_count"], False
            records.append(
                RunRecord(
                    method="ebgmcr",
                    n_true=c_star,
                    mult=mult,
                    snr_db=gt.snr_db,
                    r2=min(r2, 1.0),
                    estimated_count=ec,
                    success=success,
                    seed=run_seed,
                    wall_ms=wall,
                )
            )
    else:
        _eprint(f"unknown method: {args.method}")
        return 2
    records.sort(key=lambda r: r.seed)
    write_run_records(args.out, records, append=args.append)
    frac = sum(r.success for r in records) / len(records)
    print(f"{args.method}: {len(records)} runs, success fraction {frac:.2f}")
    return 0


def _band_label(r2: float) -> str:
    for lo, hi in DEFAULT_BANDS:
        if lo <= r2 < hi:
            return f"{lo:g}-{hi:g}"
    return "below"


def _aggregate(records: Sequence[RunRecord]) -> list[dict]:
    groups: dict[tuple[int, str], list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.n_true, _band_label(rec.r2)), []).append(rec)
    rows = []
    for (n_true, band), recs in sorted(groups.items()):
        ecs = np.array([r.estimated_count for r in recs], dtype=np.float64)
        rows.append(
            {
                "n_true": n_true,
                "band": band,
                "mean_ec": float(ecs.mean()),
                "sd_ec": float(ecs.std(ddof=0)) if len(ecs) > 1 else 0.0,
                "n": len(recs),
            }
        )
    return rows


def _render_svg(rows: Sequence[dict], path: str) -> None:
    """Estimated-vs-true chart: mean line, +/-1 SD ribbon, identity dashed."""
    width, height, margin = 640, 480, 60
    pts: dict[int, tuple[float, float]] = {}
    for row in rows:
        n = row["n_true"]
        if n not in pts or row["n"] > 0:
            prev = pts.get(n)
            if prev is None:
                pts[n] = (row["mean_ec"], row["sd_ec"])
            else:
                pts[n] = max(prev, (row["mean_ec"], row["sd_ec"]), key=lambda t: t[0])
    xs = sorted(pts)
    if not xs:
        raise ValueError("no rows to plot")
    means = [pts[x][0] for x in xs]
    sds = [pts[x][1] for x in xs]
    lo = 0.0
    hi = max(max(x for x in xs), max(m + s for m, s in zip(means, sds))) * 1.1 + 1

    def sx(v: float) -> float:
        return margin + (v - lo) / (hi - lo) * (width - 2 * margin)

    def sy(v: float) -> float:
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{sx(lo)}" y1="{sy(lo)}" x2="{sx(hi)}" y2="{sy(hi)}" '
        'stroke="gray" stroke-dasharray="6,4"/>',
    ]
    if len(xs) > 1:
        ribbon = [f"{sx(x)},{sy(m + s)}" for x, m, s in zip(xs, means, sds)]
        ribbon += [f"{sx(x)},{sy(max(m - s, 0))}" for x, m, s in zip(reversed(xs), reversed(means), reversed(sds))]
        parts.append(f'<polygon points="{" ".join(ribbon)}" fill="lightsteelblue" opacity="0.5"/>')
    line = " ".join(f"{sx(x)},{sy(m)}" for x, m in zip(xs, means))
    parts.append(f'<polyline points="{line}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for x, m in zip(xs, means):
        parts.append(f'<circle cx="{sx(x)}" cy="{sy(m)}" r="4" fill="steelblue"/>')
        parts.append(
            f'<text x="{sx(x)}" y="{height - margin + 20}" text-anchor="middle" '
            f'font-size="12">{x}</text>'
        )
    parts.append(
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="13">'
        "true component count</text>"
    )
    parts.append(
        f'<text x="18" y="{height / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {height / 2})">estimated component count</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def cmd_report(args: argparse.Namespace) -> int:
    records: list[RunRecord] = []
    for source in args.runs:
        path = source
        if os.path.isdir(source):
            path = os.path.join(source, "runs.csv")
        records.extend(read_run_records(path))
    if not records:
        _eprint("no input rows")
        return 1
    rows = _aggregate(records)
    _write_manifest(
        os.path.dirname(os.path.abspath(args.out)) or ".",
        {"command": "report", "runs": list(args.runs), "format": args.format, "out": args.out},
    )
    if args.format == "csv":
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["n_true", "band", "mean_ec", "sd_ec", "n"])
            writer.writeheader()
            writer.writerows(rows)
    else:
        _render_svg(rows, args.out)
    print(f"aggregated {len(records)} records into {len(rows)} rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebgmcr",
        description="Generative curve resolution: synthesize, solve, benchmark, report.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a ground-truthed synthetic dataset")
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--snr-db", default=None, help="target SNR in dB, or 'none' for noiseless")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="train the solver on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--pool", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file of solver config overrides")
    p.add_argument("--no-sgld", action="store_true")
    p.add_argument("--no-usage-cost", action="store_true")
    p.add_argument("--no-min-energy", action="store_true")
    p.add_argument("--no-ambiguity", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="benchmark a method over seeded runs")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=["nmf", "mcr-als", "ebgmcr"])
    p.add_argument("--target-r2", type=float, required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs.csv")
    p.add_argument("--append", action="store_true")
    p.add_argument("--pool", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--no-sgld", action="store_true")
    p.add_argument("--no-usage-cost", action="store_true")
    p.add_argument("--no-min-energy", action="store_true")
    p.add_argument("--no-ambiguity", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="aggregate run records into CSV or SVG")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--format", choices=["csv", "svg"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        _eprint(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
