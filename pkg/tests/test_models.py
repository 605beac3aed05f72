import numpy as np
import pytest

from models import (
    Rcmdp,
    TabularModel,
    Trajectory,
    returns_backward,
    sample_index,
    undiscounted_budget,
)


def make_traj(rewards, costs):
    traj = Trajectory()
    for t, (r, c) in enumerate(zip(rewards, costs)):
        traj.append(t, 0, r, c, t + 1)
    return traj


def test_returns_single_step():
    out = returns_backward(make_traj([1.0], [0.0]), 0.99, 7.0)
    assert out[0].value == 1.0
    assert out[0].cost == 0.0
    assert out[0].combined == 1.0


def test_returns_geometric_sum():
    out = returns_backward(make_traj([1.0, 1.0], [0.0, 0.0]), 0.99, 0.0)
    assert out[0].value == pytest.approx(1.99)
    assert out[1].value == pytest.approx(1.0)


def test_returns_match_direct_sum():
    rewards, costs, gamma, lam = [2.0, -1.0, 3.0], [1.0, 0.0, 1.0], 0.9, 0.5
    out = returns_backward(make_traj(rewards, costs), gamma, lam)
    for t in range(3):
        v = sum(gamma ** (k - t) * rewards[k] for k in range(t, 3))
        c = sum(gamma ** (k - t) * costs[k] for k in range(t, 3))
        assert out[t].value == pytest.approx(v)
        assert out[t].cost == pytest.approx(c)
        assert out[t].combined == pytest.approx(v - lam * c)


def test_returns_linear_in_rewards():
    base = returns_backward(make_traj([1.0, -2.0, 0.5], [0.0, 0.0, 0.0]), 0.95, 1.0)
    scaled = returns_backward(make_traj([3.0, -6.0, 1.5], [0.0, 0.0, 0.0]), 0.95, 1.0)
    for a, b in zip(base, scaled):
        assert b.value == pytest.approx(3 * a.value)
        # without costs the multiplier has no effect
        assert a.combined == a.value


def test_returns_reject_bad_input():
    with pytest.raises(ValueError):
        returns_backward(Trajectory(), 0.9, 0.0)
    with pytest.raises(ValueError):
        returns_backward(make_traj([1.0], [0.0]), 0.9, -1.0)


def test_undiscounted_budget():
    assert undiscounted_budget(6.0, 1.0, 100) == 6.0
    assert undiscounted_budget(6.0, 0.99, 100) == pytest.approx(9.4642, abs=1e-3)
    assert undiscounted_budget(0.0, 0.9, 50) == 0.0
    with pytest.raises(ValueError):
        undiscounted_budget(1.0, 0.9, 0)


def test_rcmdp_validation():
    kwargs = dict(n_states=2, n_actions=2, reward=lambda s, a, n: 0.0, constraint_cost=lambda s, a, n: 0.0,
                  budget=1.0, discount=0.9, horizon=10, is_terminal=lambda s: s == 1)
    task = Rcmdp(**kwargs)
    assert task.non_terminal_states() == [0]
    assert task.sample_start(np.random.default_rng(0)) == 0
    assert task.policy_input_width == 2
    with pytest.raises(ValueError):
        Rcmdp(**{**kwargs, "discount": 1.0})
    with pytest.raises(ValueError):
        Rcmdp(**{**kwargs, "budget": -1.0})


def test_tabular_model_validation():
    support = np.array([[[0, 1]]])
    TabularModel(support, np.array([[[0.25, 0.75]]]))
    with pytest.raises(ValueError):
        TabularModel(support, np.array([[[0.5, 0.6]]]))
    with pytest.raises(ValueError):
        TabularModel(np.array([[[0, 0]]]), np.array([[[0.5, 0.5]]]))
    with pytest.raises(ValueError):
        TabularModel(np.array([[[0, -1]]]), np.array([[[0.5, 0.5]]]))


def test_tabular_model_renormalises_small_drift():
    model = TabularModel(np.array([[[0, 1]]]), np.array([[[0.5, 0.5 + 1e-8]]]))
    assert model.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert model.dense_row(0, 0).tolist() == pytest.approx([0.5, 0.5], abs=1e-7)
    assert model.position_of(0, 0, 1) == 1


def test_sample_index_skips_zero_mass(rng):
    probs = np.array([0.0, 0.3, 0.0, 0.7, 0.0])
    draws = [sample_index(probs, rng) for _ in range(2000)]
    assert set(draws) <= {1, 3}
    assert abs(np.mean(np.array(draws) == 3) - 0.7) < 0.05
