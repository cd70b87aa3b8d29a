#!/usr/bin/env python3
"""
metacl
======
Command-line entry point for continual semi-supervised experiments.

  1. ``gen-data`` writes a synthetic image pool as an SSDS container plus a
     config that points at it;
  2. ``run`` trains and evaluates MCSSL and the baselines task by task,
     writing ``results.csv``, ``matrix_<method>.csv`` and per-method state;
  3. ``resume`` continues an interrupted ``run`` from its saved state;
  4. ``metrics`` recomputes A and F from an accuracy-matrix CSV;
  5. ``sweep`` repeats ``run`` over labelled or unlabelled budgets.

**Usage**
---------
```bash
python metacl.py gen-data --preset blobs8 --out data/
python metacl.py run --config data/config.json --out runs/blobs8 --seed 7
python metacl.py metrics --matrix runs/blobs8/matrix_mcssl.csv
python metacl.py sweep --config data/config.json --vary labelled --values 50 100 --out runs/sweep
```

Exit status: 0 on success, 2 on configuration errors (including bad flags),
3 on data errors, 1 on anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from bench_data import gen_synth_blobs, save_pool, stream_from_config
from bench_metrics import (
    AccuracyMatrix,
    avg_accuracy,
    avg_forgetting,
    format_table,
    matrix_to_frame,
    read_matrix_csv,
    summarize,
)
from config import DEFAULT_OUT_DIR, ExperimentConfig, load_config
from continual_runtime import METHODS, load_state, run_experiment
from errors import ConfigError, DataError

logger = logging.getLogger("metacl")

RESULTS_FILE = "results.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_COLUMNS = ["method", "vary", "value", "A", "F", "seed"]
VARY_KEYS = {"labelled": "labelled_per_task", "unlabelled": "unlabelled_per_task"}


# ---------------------------------------------------------------------------
# Experiment helpers
# ---------------------------------------------------------------------------

def write_results(out_dir: Path, matrices: dict[str, AccuracyMatrix], seed: int) -> pd.DataFrame:
    """results.csv for every method plus one matrix CSV each."""
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for method, matrix in matrices.items():
        frames.append(summarize(matrix, method, seed))
        matrix_to_frame(matrix).to_csv(out_dir / f"matrix_{method}.csv", index=False)
    results = pd.concat(frames, ignore_index=True)
    results.to_csv(out_dir / RESULTS_FILE, index=False)
    return results


def run_methods(cfg: ExperimentConfig, methods: Sequence[str], out_dir: Path) -> pd.DataFrame:
    stream = stream_from_config(cfg)
    matrices = {}
    for method in methods:
        logger.info("Running %s on %d tasks (seed %d)", method, len(stream), cfg.seed)
        matrices[method] = run_experiment(stream, cfg, method, out_dir=out_dir).matrix
    return write_results(out_dir, matrices, cfg.seed)


def resume_methods(out_dir: Path, methods: Sequence[str]) -> pd.DataFrame:
    matrices, seed = {}, 0
    for method in methods:
        state = load_state(out_dir, method)
        cfg, seed = state.config, state.config.seed
        matrices[method] = run_experiment(stream_from_config(cfg), cfg, method, out_dir=out_dir, state=state).matrix
    return write_results(out_dir, matrices, seed)


def run_sweep(
    cfg: ExperimentConfig, vary: str, values: Sequence[int], methods: Sequence[str], out_dir: Path
) -> pd.DataFrame:
    """One full experiment per budget value; rows (method, vary, value, A, F, seed)."""
    if vary not in VARY_KEYS:
        raise ConfigError(f"--vary must be one of {sorted(VARY_KEYS)}, got {vary!r}")
    rows = []
    for value in values:
        point = cfg.replace(**{VARY_KEYS[vary]: int(value)})
        results = run_methods(point, methods, out_dir / f"{vary}_{value}")
        for method in methods:
            matrix = read_matrix_csv(out_dir / f"{vary}_{value}" / f"matrix_{method}.csv")
            rows.append({
                "method": method,
                "vary": vary,
                "value": int(value),
                "A": avg_accuracy(matrix)[0],
                "F": avg_forgetting(matrix)[0],
                "seed": point.seed,
            })
        logger.debug("Sweep point %s=%s done (%d result rows)", vary, value, len(results))
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / SWEEP_FILE, index=False)
    return table


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "preset", None):
        overrides["preset"] = args.preset
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "task_aware", False):
        overrides["task_aware"] = True
    return load_config(args.config, overrides)


def _methods(args: argparse.Namespace) -> list[str]:
    return list(dict.fromkeys(args.method)) if args.method else list(METHODS)


def cmd_gen_data(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    out = Path(args.out).expanduser().resolve()
    pool = gen_synth_blobs(cfg.num_classes, cfg.synth_per_class, cfg.image_size, cfg.noise_level,
                           cfg.seed, channels=cfg.channels)
    pool_path = save_pool(pool, out / "pool.ssds", cfg.num_classes)
    cfg = cfg.replace(data_path=str(pool_path))
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %d images to %s and config to %s", len(pool), pool_path, cfg_path)


def cmd_run(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    results = run_methods(cfg, _methods(args), Path(args.out))
    print(format_table(results))


def cmd_resume(args: argparse.Namespace) -> None:
    results = resume_methods(Path(args.out), _methods(args))
    print(format_table(results))


def cmd_metrics(args: argparse.Namespace) -> None:
    matrix = read_matrix_csv(args.matrix)
    a, a_k = avg_accuracy(matrix, allow_partial=True)
    f, f_k = avg_forgetting(matrix, allow_partial=True)
    table = pd.DataFrame({"task_k": range(1, len(a_k) + 1), "A_k": a_k, "F_k": f_k})
    print(format_table(table))
    print(f"A = {a:.6f}")
    print(f"F = {f:.6f}")


def cmd_sweep(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    table = run_sweep(cfg, args.vary, args.values, _methods(args), Path(args.out))
    print(format_table(table))


# ---------------------------------------------------------------------------
# Orchestration (main entry point)
# ---------------------------------------------------------------------------

def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="metacl", description="Continual semi-supervised learning experiments")
    p.add_argument("--verbose", action="store_true", help="Enable debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", type=Path, default=None, help="JSON config file")
        sp.add_argument("--preset", default=None, help="Named preset applied before the config keys")
        sp.add_argument("--seed", type=int, default=None, help="Override the config seed")

    def with_methods(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--method", action="append", choices=METHODS,
                        help="Method to run (repeatable; default: all)")

    gen = sub.add_parser("gen-data", help="Write a synthetic SSDS pool and matching config")
    with_config(gen)
    gen.add_argument("--out", required=True, help="Output directory")
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser("run", help="Train and evaluate on the task stream")
    with_config(run)
    with_methods(run)
    run.add_argument("--out", default=DEFAULT_OUT_DIR, help=f"Output directory (default: {DEFAULT_OUT_DIR})")
    run.add_argument("--task-aware", action="store_true", help="Evaluate with task-specific priors")
    run.set_defaults(func=cmd_run)

    resume = sub.add_parser("resume", help="Continue a run from its saved state")
    with_methods(resume)
    resume.add_argument("--out", required=True, help="Directory of the interrupted run")
    resume.set_defaults(func=cmd_resume)

    metrics = sub.add_parser("metrics", help="Compute A and F from a matrix CSV")
    metrics.add_argument("--matrix", required=True, type=Path, help="matrix_<method>.csv")
    metrics.set_defaults(func=cmd_metrics)

    sweep = sub.add_parser("sweep", help="Repeat the run over labelled or unlabelled budgets")
    with_config(sweep)
    with_methods(sweep)
    sweep.add_argument("--vary", required=True, choices=sorted(VARY_KEYS))
    sweep.add_argument("--values", required=True, type=int, nargs="+")
    sweep.add_argument("--out", default=DEFAULT_OUT_DIR)
    sweep.add_argument("--task-aware", action="store_true")
    sweep.set_defaults(func=cmd_sweep)
    return p.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)

    logging.basicConfig(
        format="%(levelname)s | %(asctime)s | %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        args.func(args)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc, exc_info=args.verbose)
        return 2
    except DataError as exc:
        logger.error("Data error: %s", exc, exc_info=args.verbose)
        return 3
    except Exception as exc:
        logger.error("%s failed: %s", args.command, exc, exc_info=args.verbose)
        return 1
    logger.info("%s completed successfully.", args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
