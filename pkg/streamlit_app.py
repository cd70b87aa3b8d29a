import importlib

import streamlit as st

from config import DEFAULT_OUT_DIR
from results_utils import list_runs, run_label

st.set_page_config(page_title="Continual SSL Results", layout="wide")

PAGES = {
    "📈 Results Summary": "results_summary",
    "🧩 Accuracy Matrix": "accuracy_matrix",
}

# Sidebar: pick an output directory of `metacl run` / `metacl sweep`, then a page
st.sidebar.title("🧪 Runs")
root = st.sidebar.text_input("Runs directory", DEFAULT_OUT_DIR)
runs = list_runs(root)
if not runs:
    st.title("Continual SSL Results")
    st.info(f"No results.csv or sweep.csv under {root}. Start one with `python metacl.py run --out {root}`.")
    st.stop()

run_dir = st.sidebar.selectbox("Run", runs, format_func=lambda p: run_label(root, p))
page = st.sidebar.radio("View", list(PAGES))
st.sidebar.caption(f"Reading {run_dir}")

view = importlib.import_module(f"views.{PAGES[page]}")
view.main(str(run_dir))
