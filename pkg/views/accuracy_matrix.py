import streamlit as st

from results_utils import get_matrix, get_prior_table, get_state, list_methods


def main(run_dir: str):
    st.title("🧩 Accuracy Matrix")

    methods = list_methods(run_dir)
    if not methods:
        st.warning("This run has no matrix CSVs.")
        return
    method = st.sidebar.selectbox("Method", methods)

    matrix = get_matrix(run_dir, method)
    st.markdown("Row *k*: accuracy on every task *j ≤ k* after training task *k*.")
    st.dataframe(matrix.style.format("{:.4f}", na_rep=""), use_container_width=True)
    st.download_button("📥 Download matrix", matrix.to_csv(), f"matrix_{method}.csv")

    state = get_state(run_dir, method)
    if not state:
        return

    st.subheader("⚙️ Run state")
    kpi1, kpi2, kpi3 = st.columns(3)
    kpi1.metric("Tasks done", state.get("tasks_done", 0))
    kpi2.metric("Peak live decoded models", state.get("peak_live_models", 0))
    base = state.get("base_accuracy", [])
    kpi3.metric("Last base-model accuracy", f"{base[-1]:.4f}" if base else "n/a")

    priors = get_prior_table(run_dir, method)
    if not priors.empty:
        st.subheader("🗂 Stored task priors")
        st.dataframe(priors, use_container_width=True, hide_index=True)

    with st.expander("Config"):
        st.json(state.get("config", {}))
