import pandas as pd

from bench_metrics import AccuracyMatrix, matrix_to_frame
from results_utils import RESULTS_FILE, SWEEP_FILE, list_methods, list_runs, run_label


def _write_run(run_dir, methods=("mcssl",)):
    run_dir.mkdir(parents=True, exist_ok=True)
    m = AccuracyMatrix(num_tasks=1)
    m.append_row([0.5])
    for method in methods:
        matrix_to_frame(m).to_csv(run_dir / f"matrix_{method}.csv", index=False)
    pd.DataFrame({"method": list(methods), "task_k": 1, "A_k": 0.5, "F_k": 0.0, "seed": 0}).to_csv(
        run_dir / RESULTS_FILE, index=False
    )


def test_sweep_root_is_listed_next_to_its_points(tmp_path):
    sweep = tmp_path / "sweep"
    _write_run(sweep / "labelled_50")
    _write_run(sweep / "labelled_100")
    pd.DataFrame({"method": ["mcssl"], "vary": ["labelled"], "value": [50], "A": [0.5], "F": [0.0], "seed": [0]}).to_csv(
        sweep / SWEEP_FILE, index=False
    )
    _write_run(tmp_path / "plain")

    runs = list_runs(tmp_path)
    assert runs == sorted([sweep, sweep / "labelled_50", sweep / "labelled_100", tmp_path / "plain"])
    assert [run_label(tmp_path, r) for r in list_runs(sweep)] == [".", "labelled_100", "labelled_50"]


def test_missing_root_has_no_runs(tmp_path):
    assert list_runs(tmp_path / "nothing") == []


def test_methods_come_from_matrix_files(tmp_path):
    _write_run(tmp_path, methods=("single-ssl", "ewc-ssl"))
    assert list_methods(tmp_path) == ["ewc-ssl", "single-ssl"]
    assert list_methods(tmp_path / "elsewhere") == []


def test_run_label_outside_the_root(tmp_path):
    assert run_label(tmp_path / "a", tmp_path / "b") == str(tmp_path / "b")
