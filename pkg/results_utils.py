import json
from pathlib import Path

import numpy as np
import pandas as pd
import streamlit as st

from bench_metrics import RESULT_COLUMNS, avg_accuracy, avg_forgetting, read_matrix_csv
from config import DEFAULT_OUT_DIR

RESULTS_FILE = "results.csv"
SWEEP_FILE = "sweep.csv"


# ----------------------------------------------------------------------
# 📂  Run discovery
# ----------------------------------------------------------------------
def list_runs(root: str | Path = DEFAULT_OUT_DIR) -> list[Path]:
    """Directories under ``root`` (itself included) holding a results.csv or a sweep.csv."""
    root = Path(root)
    if not root.exists():
        return []
    found = {p.parent for name in (RESULTS_FILE, SWEEP_FILE) for p in root.rglob(name)}
    return sorted(found)


def list_methods(run_dir: str | Path) -> list[str]:
    run_dir = Path(run_dir)
    return sorted(p.stem.removeprefix("matrix_") for p in run_dir.glob("matrix_*.csv"))


def run_label(root: str | Path, run_dir: str | Path) -> str:
    """``run_dir`` relative to ``root``; the root itself shows as ``.``."""
    try:
        rel = Path(run_dir).relative_to(Path(root))
    except ValueError:
        return str(run_dir)
    return str(rel) if rel.parts else "."


# ----------------------------------------------------------------------
# 📄  Cached data helpers
# ----------------------------------------------------------------------
@st.cache_data
def get_results(run_dir: str) -> pd.DataFrame:
    path = Path(run_dir) / RESULTS_FILE
    if not path.exists():
        return pd.DataFrame(columns=RESULT_COLUMNS)
    df = pd.read_csv(path)
    df["method"] = df["method"].astype("string")
    return df


@st.cache_data
def get_overview(run_dir: str) -> pd.DataFrame:
    """Final A and F per method, recomputed from the matrix CSVs."""
    rows = []
    for method in list_methods(run_dir):
        matrix = read_matrix_csv(Path(run_dir) / f"matrix_{method}.csv")
        rows.append({
            "method": method,
            "tasks": len(matrix.rows),
            "A": avg_accuracy(matrix, allow_partial=True)[0],
            "F": avg_forgetting(matrix, allow_partial=True)[0],
        })
    return pd.DataFrame(rows, columns=["method", "tasks", "A", "F"])


@st.cache_data
def get_matrix(run_dir: str, method: str) -> pd.DataFrame:
    df = pd.read_csv(Path(run_dir) / f"matrix_{method}.csv")
    return df.set_index("task_k")


@st.cache_data
def get_state(run_dir: str, method: str) -> dict:
    path = Path(run_dir) / method / "state.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


@st.cache_data
def get_prior_table(run_dir: str, method: str) -> pd.DataFrame:
    """One row per stored task prior: mean norm and average variance."""
    priors = get_state(run_dir, method).get("priors", {})
    rows = []
    for task_id in sorted(priors, key=int):
        mean = np.asarray(priors[task_id]["mean"])
        var = np.exp(np.asarray(priors[task_id]["log_var"]))
        rows.append({
            "task": int(task_id) + 1,
            "|mean|": float(np.linalg.norm(mean)),
            "mean variance": float(var.mean()),
            "min variance": float(var.min()),
        })
    return pd.DataFrame(rows, columns=["task", "|mean|", "mean variance", "min variance"])


@st.cache_data
def get_sweep(run_dir: str) -> pd.DataFrame:
    path = Path(run_dir) / SWEEP_FILE
    if not path.exists():
        return pd.DataFrame()
    return pd.read_csv(path)
