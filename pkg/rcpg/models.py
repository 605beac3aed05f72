"""Domain types for robust constrained MDPs.

Holds the task description (`Rcmdp`), tabular transition models, episode
trajectories and the discounted Lagrangian returns every trainer shares.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

PROB_TOLERANCE = 1e-9


def one_hot(index: int, width: int) -> np.ndarray:
    vec = np.zeros(width, dtype=np.float64)
    vec[index] = 1.0
    return vec


@dataclass(frozen=True)
class Rcmdp:
    """An RCMDP task: spaces, reward/constraint-cost, budget, discount, horizon.

    `reward` and `constraint_cost` are evaluated on a transition
    (s, a, s_next); tasks whose quantities only depend on (s, a) ignore
    `s_next`.
    """

    n_states: int
    n_actions: int
    reward: Callable[[int, int, int], float]
    constraint_cost: Callable[[int, int, int], float]
    budget: float
    discount: float
    horizon: int
    is_terminal: Callable[[int], bool]
    initial_state: int = 0
    policy_features: Optional[Callable[[int], np.ndarray]] = None

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.budget < 0.0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def policy_input_width(self) -> int:
        return len(self.encode_state(0))

    def encode_state(self, state: int) -> np.ndarray:
        """Policy input for a state (one-hot unless the task says otherwise)."""
        if self.policy_features is not None:
            return np.asarray(self.policy_features(state), dtype=np.float64)
        return one_hot(state, self.n_states)

    def non_terminal_states(self) -> List[int]:
        return [s for s in range(self.n_states) if not self.is_terminal(s)]

    def sample_start(self, rng: np.random.Generator) -> int:
        """Uniformly random non-terminal start state (training episodes)."""
        candidates = self.non_terminal_states()
        return int(candidates[rng.integers(len(candidates))])


class TabularModel:
    """Transition model over (state, action) with an explicit successor support.

    `support[s, a]` lists successor states, padded with -1 where a pair has
    fewer successors than the widest row; `probs[s, a]` holds the matching
    probabilities (0 on padding). Rows are renormalised on construction.
    """

    def __init__(self, support: np.ndarray, probs: np.ndarray):
        support = np.asarray(support, dtype=np.int64)
        probs = np.array(probs, dtype=np.float64)
        if support.ndim != 3 or support.shape != probs.shape:
            raise ValueError(
                f"support {support.shape} and probs {probs.shape} must share an (S, A, K) shape"
            )
        valid = support >= 0
        if np.any(probs[~valid] != 0.0):
            raise ValueError("probability mass on padded support entries")
        if np.any(probs < 0.0):
            raise ValueError("transition probabilities must be nonnegative")
        for s in range(support.shape[0]):
            for a in range(support.shape[1]):
                row = support[s, a][valid[s, a]]
                if row.size == 0:
                    raise ValueError(f"empty successor support for pair ({s}, {a})")
                if len(np.unique(row)) != row.size:
                    raise ValueError(f"duplicate successors for pair ({s}, {a})")
        sums = probs.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("transition rows must sum to 1")
        # rows already normalised are kept bit-for-bit
        drift = np.abs(sums - 1.0) > 1e-12
        probs[drift] = probs[drift] / sums[drift][:, None]
        self.support = support
        self.probs = probs
        self.support.setflags(write=False)
        self.probs.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.support.shape[0]

    @property
    def n_actions(self) -> int:
        return self.support.shape[1]

    @property
    def width(self) -> int:
        return self.support.shape[2]

    def mask(self, state: int, action: int) -> np.ndarray:
        return self.support[state, action] >= 0

    def row(self, state: int, action: int) -> np.ndarray:
        return self.probs[state, action]

    def dense_row(self, state: int, action: int) -> np.ndarray:
        """Distribution over all states for one pair."""
        dense = np.zeros(self.n_states, dtype=np.float64)
        valid = self.mask(state, action)
        dense[self.support[state, action][valid]] = self.probs[state, action][valid]
        return dense

    def position_of(self, state: int, action: int, successor: int) -> int:
        hits = np.flatnonzero(self.support[state, action] == successor)
        if hits.size == 0:
            raise ValueError(f"successor {successor} outside support of ({state}, {action})")
        return int(hits[0])

    def sample(self, state: int, action: int, rng: np.random.Generator) -> int:
        position = sample_index(self.probs[state, action], rng)
        return int(self.support[state, action, position])

    def with_probs(self, probs: np.ndarray) -> "TabularModel":
        return TabularModel(self.support, probs)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; consumes exactly one uniform from `rng`."""
    cumulative = np.cumsum(probs)
    position = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    position = min(position, len(probs) - 1)
    # skip zero-probability entries hit by rounding at the top end
    while probs[position] <= 0.0 and position > 0:
        position -= 1
    return position


@dataclass
class Trajectory:
    """One simulated episode plus the gradient caches collected on the way."""

    states: List[int] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    costs: List[float] = field(default_factory=list)
    next_states: List[int] = field(default_factory=list)
    policy_grads: List[np.ndarray] = field(default_factory=list)
    entropy_grads: List[np.ndarray] = field(default_factory=list)
    adversary_grads: List[np.ndarray] = field(default_factory=list)
    deviations: List[float] = field(default_factory=list)

    def append(self, state: int, action: int, reward: float, cost: float, next_state: int):
        self.states.append(int(state))
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.costs.append(float(cost))
        self.next_states.append(int(next_state))

    @property
    def stop(self) -> int:
        """T_stop: number of steps taken before a terminal state or the horizon."""
        return len(self.states)

    def __len__(self) -> int:
        return self.stop

    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def total_cost(self) -> float:
        return float(np.sum(self.costs))


@dataclass(frozen=True)
class LagrangianReturns:
    value: float
    cost: float
    combined: float


def returns_backward(traj: Trajectory, discount: float, multiplier: float) -> List[LagrangianReturns]:
    """Discounted reward/cost-to-go for every step, computed from T_stop-1 down to 0."""
    if traj.stop == 0:
        raise ValueError("trajectory holds no steps")
    if multiplier < 0.0:
        raise ValueError(f"multiplier must be >= 0, got {multiplier}")
    out: List[Optional[LagrangianReturns]] = [None] * traj.stop
    value = 0.0
    cost = 0.0
    for t in range(traj.stop - 1, -1, -1):
        value = traj.rewards[t] + discount * value
        cost = traj.costs[t] + discount * cost
        out[t] = LagrangianReturns(value=value, cost=cost, combined=value - multiplier * cost)
    return out  # type: ignore[return-value]


def undiscounted_budget(budget: float, discount: float, horizon: int) -> float:
    """Budget corrected for undiscounted evaluation: d * T / sum_{i<T} gamma^i."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if discount == 1.0:
        return float(budget)
    geometric = float(np.sum(discount ** np.arange(horizon)))
    return float(budget) * horizon / geometric


def as_returns_array(returns: Sequence[LagrangianReturns]) -> np.ndarray:
    """(T, 3) array of value, cost, combined."""
    return np.array([[r.value, r.cost, r.combined] for r in returns], dtype=np.float64)
