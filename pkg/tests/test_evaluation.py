from collections import deque

import numpy as np
import pandas as pd
import pytest

import evaluation
from diff_net import DiffNet
from environments import GRID_SIZE, MOVES, GridEnv, InventoryEnv, grid_spec
from evaluation import (
    POOLED,
    RunReport,
    build_test_grids,
    greedy_rollout,
    make_test_env,
    overshoot,
    penalised_return,
    read_summary,
    run_test_suite,
    setting_label,
    summarize,
)


def right_then_up_policy():
    """Hand-set net: move right until the last column, then up."""
    # W1 = [1, 0], b1 = 0, W2 = [0, -1, 0, 0], b2 = [-10, 0.9, 0, -10]
    params = [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, -10.0, 0.9, 0.0, -10.0]
    return DiffNet(2, 4, hidden_width=1, params=params)


def shortest_path_length(start, goal):
    seen = {start: 0}
    queue = deque([start])
    while queue:
        pos = queue.popleft()
        for dx, dy in MOVES:
            nxt = (pos[0] + dx, pos[1] + dy)
            if 0 <= nxt[0] < GRID_SIZE and 0 <= nxt[1] < GRID_SIZE and nxt not in seen:
                seen[nxt] = seen[pos] + 1
                queue.append(nxt)
    return seen[goal]


def test_penalised_return_and_overshoot():
    assert penalised_return(-8.0, 3.0, 4.0) == -8.0
    assert penalised_return(-8.0, 5.0, 4.0) == -508.0
    assert penalised_return(10.0, 4.0, 4.0) == 10.0
    assert overshoot(5.0, 4.0) == 1.0
    assert overshoot(1.0, 4.0) == -3.0


def test_greedy_rollout_reaches_goal_in_shortest_time():
    env = GridEnv(grid_spec("nav1", p_success=1.0))
    value, cost = greedy_rollout(right_then_up_policy(), env)
    assert value == -shortest_path_length((0, 0), (4, 4)) == -8.0
    assert cost == 1.0


def test_greedy_ties_pick_the_lowest_action():
    # a uniform policy always picks "left", which never leaves the start corner
    env = GridEnv(grid_spec("nav1", p_success=1.0))
    flat = DiffNet(2, 4, hidden_width=3, params=np.zeros(3 * 3 + 4 * 4))
    assert greedy_rollout(flat, env) == (-200.0, 0.0)


def test_build_test_grids():
    (inventory,) = build_test_grids("inventory", n_states=20, runs_per_setting=7)
    assert len(inventory.values) == 9
    assert inventory.runs_per_setting == 7
    assert inventory.values[0] == pytest.approx((20 / 6, 20 / 8))
    nav1 = build_test_grids("nav1")
    assert [g.test_id for g in nav1] == ["1A", "1B"]
    assert nav1[1].values == [5, 10, 20, 50, 100]
    nav2 = build_test_grids("nav2")
    assert nav2[1].values == [5, 10, 15, 20, 25]
    with pytest.raises(ValueError):
        build_test_grids("maze")


def test_make_test_env(rng):
    env = make_test_env("inventory", "IM", (5.0, 2.5), rng)
    assert isinstance(env, InventoryEnv) and env.demand == (5.0, 2.5)
    env = make_test_env("nav1", "1A", 0.7, rng)
    assert env.spec.p_success == 0.7
    env = make_test_env("nav2", "2B", 25, rng)
    assert env.spec.p_success == 0.8
    assert len(env.failure_model.states) == 25
    env = make_test_env("nav1", "1B", 10, rng)
    assert len(env.failure_model.offsets) == 10
    with pytest.raises(ValueError):
        make_test_env("nav1", "2C", 1, rng)


def test_setting_labels():
    assert setting_label(0.6) == "0.6"
    assert setting_label(100) == "100"
    assert setting_label((5.0, 10 / 3)) == "5/3.333"


def results_frame(rows):
    columns = ["seed", "param_value", "value", "overshoot"]
    frame = pd.DataFrame(rows, columns=columns)
    frame.insert(0, "algorithm", "cpg")
    frame.insert(1, "domain", "nav1")
    frame.insert(2, "test_id", "1A")
    frame.insert(3, "param_name", "p_success")
    frame["repeat"] = frame.groupby(["seed", "param_value"]).cumcount()
    frame["constraint_cost"] = frame["overshoot"] + 4.0
    return frame[evaluation.RESULT_COLUMNS]


def test_summarize_penalises_seed_means_and_pools_settings():
    results = results_frame([
        (0, "0.6", -10.0, 3.0), (0, "0.6", -10.0, -1.0),
        (1, "0.6", -12.0, -1.0),
        (0, "1", -8.0, -2.0),
        (1, "1", -8.0, -2.0),
    ])
    summary = summarize(results)
    rows = summary.set_index("param_value")
    # seed 0 averages its repeats before the penalty: -10 - 500 * 1
    assert rows.loc["0.6", "penalised_return"] == pytest.approx((-510.0 - 12.0) / 2)
    assert rows.loc["0.6", "mean_overshoot"] == pytest.approx(0.0)
    assert rows.loc["1", "penalised_return"] == -8.0
    assert rows.loc["1", "stderr_value"] == 0.0
    assert rows.loc[POOLED, "penalised_return"] == pytest.approx((-259.0 - 10.0) / 2)
    assert rows.loc[POOLED, "stderr_penalised_return"] == pytest.approx(124.5)
    assert np.isnan(rows.loc[POOLED, "mean_value"])
    assert list(summary.columns) == evaluation.SUMMARY_COLUMNS


def one_setting_grid(test_id="1A", values=(1.0,), runs=3):
    param = "p_success" if test_id.endswith("A") else "n_perturbations"
    return evaluation.TestGrid(domain="nav1", test_id=test_id, param_name=param, values=list(values),
                               runs_per_setting=runs)


def test_identical_deterministic_runs_have_zero_spread():
    policy = right_then_up_policy()
    report = run_test_suite({"cpg": {0: policy, 1: policy}}, [one_setting_grid()])
    assert len(report.results) == 6
    row = report.summary.iloc[0]
    assert row["mean_value"] == -8.0
    assert row["stderr_value"] == 0.0
    assert row["n_seeds"] == 2
    assert row["penalised_return"] == -8.0


def test_suite_output_is_reproducible_across_job_counts(tmp_path):
    policy = DiffNet(2, 4, hidden_width=5, rng=np.random.default_rng(0))
    grids = [one_setting_grid("1A", (0.6, 0.9), 2), one_setting_grid("1B", (5, 100), 2)]
    serial = run_test_suite({"pg": {0: policy}, "cpg": {0: policy}}, grids, jobs=1)
    parallel = run_test_suite({"cpg": {0: policy}, "pg": {0: policy}}, grids, jobs=2)
    serial.write(str(tmp_path / "serial"))
    parallel.write(str(tmp_path / "parallel"))
    for name in ("results.csv", "summary.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
    # the same seed sees the same perturbations whichever algorithm is tested
    results = serial.results
    assert results[results.algorithm == "pg"]["value"].tolist() == \
        results[results.algorithm == "cpg"]["value"].tolist()


def test_summary_notes_are_skipped_on_read(tmp_path):
    policy = right_then_up_policy()
    report = run_test_suite({"cpg": {0: policy}}, [one_setting_grid(runs=1)])
    report.notes.append("config_hash abc")
    _, summary_path = report.write(str(tmp_path))
    with open(summary_path) as f:
        assert f.readline().startswith("# ")
    frame = read_summary(summary_path)
    assert list(frame.columns) == evaluation.SUMMARY_COLUMNS
    assert len(frame) == 2


def test_missing_snapshots_are_rejected():
    with pytest.raises(ValueError):
        run_test_suite({"cpg": {}}, [one_setting_grid()])
    with pytest.raises(ValueError):
        run_test_suite({"cpg": {0: right_then_up_policy()}}, [])


def test_report_round_trip_keeps_setting_labels(tmp_path):
    report = RunReport(results=results_frame([(0, "1", -8.0, -2.0)]),
                       summary=summarize(results_frame([(0, "1", -8.0, -2.0)])))
    results_path, _ = report.write(str(tmp_path))
    reread = pd.read_csv(results_path, dtype={"param_value": str})
    assert reread["param_value"].tolist() == ["1"]
