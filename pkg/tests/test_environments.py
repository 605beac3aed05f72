import numpy as np
import pytest

from environments import (
    GridEnv,
    InventorySpec,
    NAV2_ARROWS,
    StandStill,
    cell_tables,
    collect_random_episodes,
    demand_pmf,
    grid_spec,
    grid_step,
    grid_support,
    grid_true_model,
    inventory_step,
    inventory_true_model,
    load_cell_tables,
    make_environment,
    random_offset_perturbation,
    state_index,
    worst_case_arrow_perturbation,
)
from uncertainty_set import estimate_nominal

RIGHT, UP = 1, 2


def test_inventory_empty_store_stays_empty(rng):
    spec = InventorySpec()
    for _ in range(20):
        assert inventory_step(0, 0, rng, spec.training_demand, spec) == (0, 0.0, 0.0)


def test_inventory_purchase_limit():
    spec = InventorySpec(n_states=24)
    assert spec.limit(2) == 10.0
    assert spec.constraint_cost(2, 10) == 0.0
    assert spec.constraint_cost(2, 13) == 3.0
    # the raw order enters the cost even when capacity truncates it
    assert spec.effective_order(20, 13) == 3
    assert spec.constraint_cost(20, 13) == 7.0


def test_inventory_level_stays_in_range(rng):
    spec = InventorySpec()
    state = 0
    for _ in range(2000):
        state, _, _ = inventory_step(state, int(rng.integers(spec.n_states)), rng, (5.0, 3.0), spec)
        assert 0 <= state <= spec.n_states - 1


def test_inventory_mean_successor_matches_exact_law():
    spec = InventorySpec()
    rng = np.random.default_rng(7)
    draws = np.array([inventory_step(5, 5, rng, spec.training_demand, spec)[0] for _ in range(100_000)])
    row = inventory_true_model(spec, spec.training_demand).dense_row(5, 5)
    expected = float(np.arange(spec.n_states) @ row)
    stderr = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - expected) < 3 * stderr + 1e-9


def test_demand_pmf_is_a_distribution():
    pmf = demand_pmf(20, 5.0, 10 / 3)
    assert pmf.min() >= 0.0
    assert pmf.sum() == pytest.approx(1.0)


def test_grid_moves_and_boundaries(rng):
    spec = grid_spec("nav1", p_success=1.0)
    assert grid_step((0, 0), RIGHT, rng, spec) == ((1, 0), -1.0, 1.0)
    assert grid_step((0, 0), 0, rng, spec) == ((0, 0), -1.0, 0.0)
    assert grid_step((2, 4), UP, rng, spec)[0] == (2, 4)


def test_staircase_path_crosses_four_grey_cells(rng):
    spec = grid_spec("nav1", p_success=1.0)
    pos, cost = (0, 0), 0.0
    for action in [RIGHT, UP] * 4:
        pos, _, c = grid_step(pos, action, rng, spec)
        cost += c
    assert pos == (4, 4)
    assert cost == 4.0


def test_cell_tables():
    grey, red, arrows = cell_tables("nav1")
    assert len(grey) == 6 and not red and not arrows
    grey, red, arrows = cell_tables("nav2")
    assert len(grey) == 7
    assert len(red) == 4
    assert len(arrows) == 24
    assert (4, 4) not in arrows
    assert arrows[(0, 0)] == (1, 0)
    assert arrows[(3, 0)] == (0, 0)
    with pytest.raises(ValueError):
        cell_tables("nav3")


def test_nav2_step_costs(rng):
    spec = grid_spec("nav2", p_success=1.0)
    costs = {grid_step((2, 1), UP, rng, spec)[2], grid_step((0, 3), UP, rng, spec)[2],
             grid_step((0, 0), UP, rng, spec)[2]}
    assert costs == {0.1, 1.0, 0.0}


def test_test_a_dynamics_stay_near_deterministic_model():
    spec = grid_spec("nav2")
    exact = grid_true_model(spec, 1.0)
    for p in (0.6, 0.7, 0.8, 0.9, 1.0):
        model = grid_true_model(spec, p)
        distance = np.abs(model.probs - exact.probs).sum(axis=2)
        assert distance.max() <= 2 * (1 - p) + 1e-12


def test_random_offset_perturbation_covers_requested_pairs(rng):
    assert len(random_offset_perturbation(100, rng).offsets) == 100
    failure = random_offset_perturbation(20, rng)
    assert len(failure.offsets) == 20
    for offset in failure.offsets.values():
        assert offset in [(0, 0), (-1, 0), (1, 0), (0, 1), (0, -1)]


def test_worst_case_arrows_apply_on_failure(rng):
    spec = grid_spec("nav2", p_success=0.0)
    failure = worst_case_arrow_perturbation(25, NAV2_ARROWS, rng)
    assert grid_step((0, 0), UP, rng, spec, failure)[0] == (1, 0)
    assert grid_step((2, 2), UP, rng, spec, failure)[0] == (1, 2)
    assert grid_step((2, 2), UP, rng, spec, StandStill())[0] == (2, 2)


def test_nominal_rows_live_on_the_neighbourhood():
    env = make_environment("nav1")
    episodes = collect_random_episodes(env, 20, np.random.default_rng(0))
    nominal, _ = estimate_nominal(episodes, 25, 4, grid_support())
    assert np.all(nominal.probs[grid_support() < 0] == 0.0)
    assert all(len(t) <= 200 for t in episodes)


def test_goal_is_terminal():
    env = GridEnv(grid_spec("nav1"))
    assert env.rcmdp.is_terminal(state_index((4, 4)))
    assert not env.rcmdp.is_terminal(0)
    assert env.rcmdp.policy_input_width == 2


def test_cell_table_override_file(tmp_path):
    path = tmp_path / "cells.csv"
    path.write_text("x,y,kind\n1,1,grey\n0,4,red\n2,2,left\n")
    grey, red, arrows = load_cell_tables(str(path))
    assert grey == {(1, 1)}
    assert red == {(0, 4)}
    assert arrows == {(2, 2): (-1, 0)}
    path.write_text("x,y,kind\n1,1,lava\n")
    with pytest.raises(ValueError):
        load_cell_tables(str(path))
