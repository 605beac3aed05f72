"""Nominal model estimation, Hoeffding L1 budgets and the worst-case inner problem."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from models import TabularModel, Trajectory

logger = logging.getLogger(__name__)

UNCERTAINTY_SET_VERSION = 1
L1_DIAMETER = 2.0
PSEUDO_COUNT = 1.0


@dataclass
class VisitationCounts:
    """n(s,a) including the pseudo-count, and observed successor counts n(s,a,s')."""

    pair_counts: np.ndarray
    successor_counts: np.ndarray
    pseudo_count: float = PSEUDO_COUNT

    @property
    def observed(self) -> np.ndarray:
        return self.successor_counts.sum(axis=2)


def estimate_nominal(
    trajs: Iterable[Trajectory],
    n_states: int,
    n_actions: int,
    support: np.ndarray,
) -> Tuple[TabularModel, VisitationCounts]:
    """Smoothed maximum-likelihood model: a pseudo-count of 1 spread uniformly over each support."""
    support = np.asarray(support, dtype=np.int64)
    if support.shape[:2] != (n_states, n_actions):
        raise ValueError(f"support shape {support.shape} does not match ({n_states}, {n_actions}, K)")
    valid = support >= 0
    if np.any(valid.sum(axis=2) == 0):
        raise ValueError("every (state, action) pair needs a nonempty successor support")

    # successor -> support position lookup, -1 outside the support
    lookup = np.full((n_states, n_actions, n_states), -1, dtype=np.int64)
    for s in range(n_states):
        for a in range(n_actions):
            for k, succ in enumerate(support[s, a]):
                if succ >= 0:
                    lookup[s, a, succ] = k

    successor_counts = np.zeros(support.shape, dtype=np.float64)
    for traj in trajs:
        for s, a, s_next in zip(traj.states, traj.actions, traj.next_states):
            k = lookup[s, a, s_next]
            if k < 0:
                raise ValueError(f"observed successor {s_next} outside the declared support of ({s}, {a})")
            successor_counts[s, a, k] += 1.0

    support_sizes = valid.sum(axis=2)
    observed = successor_counts.sum(axis=2)
    prior = np.where(valid, PSEUDO_COUNT / support_sizes[:, :, None], 0.0)
    probs = (successor_counts + prior) / (observed + PSEUDO_COUNT)[:, :, None]
    counts = VisitationCounts(pair_counts=observed + PSEUDO_COUNT, successor_counts=successor_counts)
    return TabularModel(support, probs), counts


def hoeffding_budget(
    counts: VisitationCounts,
    n_outcomes: int,
    n_states: int,
    n_actions: int,
    delta: float,
) -> np.ndarray:
    """alpha(s,a) = min(2, sqrt(2 / n(s,a) * ln(2^S' * S * A / delta)))."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    n = np.asarray(counts.pair_counts, dtype=np.float64)
    if np.any(n < 1.0):
        raise ValueError("visitation counts must be >= 1 (pseudo-count included)")
    # ln(2^S') taken as S' ln 2 so large outcome sets do not overflow
    log_term = n_outcomes * np.log(2.0) + np.log(n_states * n_actions / delta)
    return np.minimum(L1_DIAMETER, np.sqrt(2.0 / n * log_term))


def worst_case_l1(nominal_row: np.ndarray, objective: np.ndarray, alpha: float) -> np.ndarray:
    """Minimise P . v over the L1 ball of radius alpha around the nominal row.

    Sorted-value construction: move up to alpha/2 of mass onto the lowest
    objective entry, taking it from the highest entries first (ties by lower
    index).
    """
    p = np.asarray(nominal_row, dtype=np.float64)
    v = np.asarray(objective, dtype=np.float64)
    if p.shape != v.shape or p.ndim != 1:
        raise ValueError(f"row {p.shape} and objective {v.shape} must be matching vectors")
    if not np.all(np.isfinite(v)):
        raise ValueError("objective must be finite")
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("nominal row is not a probability distribution")
    if not -1e-12 <= alpha <= L1_DIAMETER + 1e-12:
        raise ValueError(f"alpha must lie in [0, 2], got {alpha}")

    out = p.copy()
    best = int(np.argmin(v))
    eps = min(alpha / 2.0, 1.0 - p[best])
    if eps <= 0.0:
        return out
    out[best] += eps
    order = np.lexsort((np.arange(len(v)), -v))
    remaining = eps
    for k in order:
        if remaining <= 0.0:
            break
        if k == best:
            continue
        take = min(remaining, out[k])
        out[k] -= take
        remaining -= take
    return np.maximum(out, 0.0)


class WorstCaseMode(str, Enum):
    VALUE = "value"
    CONSTRAINT = "constraint"
    LAGRANGIAN = "lagrangian"


@dataclass
class UncertaintySet:
    """(s,a)-rectangular L1 set: nominal model plus per-pair budget alpha(s,a)."""

    nominal: TabularModel
    budget: np.ndarray
    delta: float
    n_outcomes: int
    counts: Optional[VisitationCounts] = None

    def __post_init__(self):
        self.budget = np.asarray(self.budget, dtype=np.float64)
        expected = (self.nominal.n_states, self.nominal.n_actions)
        if self.budget.shape != expected:
            raise ValueError(f"budget shape {self.budget.shape} != {expected}")
        if np.any(self.budget < 0.0) or np.any(self.budget > L1_DIAMETER):
            raise ValueError("budgets must lie in [0, 2]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def alpha(self, state: int, action: int) -> float:
        return float(self.budget[state, action])

    def deviation(self, state: int, action: int, row: np.ndarray) -> float:
        """L1 distance of a support-aligned row from the nominal row."""
        return float(np.abs(np.asarray(row) - self.nominal.probs[state, action]).sum())

    def with_budget(self, budget: np.ndarray) -> "UncertaintySet":
        return UncertaintySet(self.nominal, budget, self.delta, self.n_outcomes, self.counts)

    # cache ------------------------------------------------------------------

    def save(self, directory: str, cache_key: str = ""):
        os.makedirs(directory, exist_ok=True)
        counts = self.counts or VisitationCounts(
            pair_counts=np.ones(self.budget.shape),
            successor_counts=np.zeros(self.nominal.support.shape),
        )
        np.savez(
            os.path.join(directory, "nominal.npz"),
            version=np.array(UNCERTAINTY_SET_VERSION),
            support=self.nominal.support,
            probs=self.nominal.probs,
            successor_counts=counts.successor_counts,
            pair_counts=counts.pair_counts,
            delta=np.array(self.delta),
            n_outcomes=np.array(self.n_outcomes),
            cache_key=np.array(cache_key),
        )
        n_states, n_actions = self.budget.shape
        states, actions = np.meshgrid(np.arange(n_states), np.arange(n_actions), indexing="ij")
        table = pd.DataFrame({
            "state": states.ravel(),
            "action": actions.ravel(),
            "alpha": self.budget.ravel(),
            "visits": counts.pair_counts.ravel(),
        })
        table.to_csv(os.path.join(directory, "alpha.csv"), index=False)
        logger.info(f"Saved uncertainty set to {directory}")

    @classmethod
    def load(cls, directory: str) -> Tuple["UncertaintySet", str]:
        """Load a cached set; returns it with the cache key it was stored under."""
        with np.load(os.path.join(directory, "nominal.npz")) as data:
            version = int(data["version"])
            if version != UNCERTAINTY_SET_VERSION:
                raise ValueError(f"uncertainty set version {version} != {UNCERTAINTY_SET_VERSION}")
            nominal = TabularModel(data["support"], data["probs"])
            counts = VisitationCounts(
                pair_counts=np.array(data["pair_counts"]),
                successor_counts=np.array(data["successor_counts"]),
            )
            delta = float(data["delta"])
            n_outcomes = int(data["n_outcomes"])
            cache_key = str(data["cache_key"])
        table = pd.read_csv(os.path.join(directory, "alpha.csv"))
        budget = np.zeros((nominal.n_states, nominal.n_actions))
        budget[table["state"].to_numpy(), table["action"].to_numpy()] = table["alpha"].to_numpy()
        return cls(nominal, budget, delta, n_outcomes, counts), cache_key


def build_uncertainty_set(
    trajs: Iterable[Trajectory],
    n_states: int,
    n_actions: int,
    support: np.ndarray,
    delta: float,
    n_outcomes: int,
) -> UncertaintySet:
    nominal, counts = estimate_nominal(trajs, n_states, n_actions, support)
    budget = hoeffding_budget(counts, n_outcomes, n_states, n_actions, delta)
    logger.info(f"Hoeffding budgets range over [{budget.min():.3f}, {budget.max():.3f}]")
    return UncertaintySet(nominal, budget, delta, n_outcomes, counts)


def select_worst_model(
    uset: UncertaintySet,
    critics: Tuple[np.ndarray, np.ndarray],
    multiplier: float,
    mode: WorstCaseMode,
) -> TabularModel:
    """Assemble P+ row by row from per-state critic estimates (V_hat, C_hat)."""
    value_est, cost_est = (np.asarray(c, dtype=np.float64) for c in critics)
    mode = WorstCaseMode(mode)
    if mode is WorstCaseMode.VALUE:
        per_state = value_est
    elif mode is WorstCaseMode.CONSTRAINT:
        per_state = -cost_est
    else:
        per_state = value_est - multiplier * cost_est

    nominal = uset.nominal
    probs = np.zeros_like(nominal.probs)
    for s in range(nominal.n_states):
        for a in range(nominal.n_actions):
            valid = nominal.mask(s, a)
            successors = nominal.support[s, a][valid]
            probs[s, a][valid] = worst_case_l1(
                nominal.probs[s, a][valid], per_state[successors], uset.budget[s, a]
            )
    return nominal.with_probs(probs)
