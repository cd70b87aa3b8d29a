import streamlit as st

from results_utils import get_overview, get_results, get_sweep


def _sweep_panel(run_dir: str) -> None:
    sweep = get_sweep(run_dir)
    if sweep.empty:
        return
    st.subheader("🔁 Budget sweep")
    wide = sweep.pivot_table(index="value", columns="method", values=["A", "F"])
    st.dataframe(wide, use_container_width=True)
    st.dataframe(sweep, use_container_width=True, hide_index=True)
    st.download_button("📥 Download sweep.csv", sweep.to_csv(index=False), "sweep.csv")


def main(run_dir: str):
    st.title("📈 Results Summary")

    df = get_results(run_dir)
    if df.empty:
        # a sweep root holds sweep.csv only; its points are listed as their own runs
        st.info("No results.csv in this directory.")
        _sweep_panel(run_dir)
        return

    # --- KPI Cards
    overview = get_overview(run_dir)
    cols = st.columns(max(len(overview), 1))
    for col, row in zip(cols, overview.itertuples(index=False)):
        col.metric(f"{row.method} A", f"{row.A:.4f}", f"F {row.F:.4f}", delta_color="off")

    # --- Per-step metrics
    methods = sorted(df["method"].dropna().unique().tolist())
    selected = st.sidebar.multiselect("Methods", methods, default=methods)
    filtered = df[df["method"].isin(selected)]

    st.subheader("🧮 Per-task A_k / F_k")
    st.dataframe(filtered, use_container_width=True, hide_index=True)

    st.subheader("📋 Wide view")
    wide = filtered.pivot_table(index="task_k", columns="method", values=["A_k", "F_k"])
    st.dataframe(wide, use_container_width=True)

    with st.expander("Markdown"):
        st.code(filtered.to_markdown(index=False, floatfmt=".4f"), language="markdown")

    st.download_button("📥 Download results.csv", df.to_csv(index=False), "results.csv")
    _sweep_panel(run_dir)
