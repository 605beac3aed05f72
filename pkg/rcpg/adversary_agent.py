"""Adversarial transition policy: nominal pretraining, Lagrangian adversary updates
and the hinge gradient that keeps it inside the L1 uncertainty set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from diff_net import AdamState, DiffNet
from lagrangian_agent import LagrangeState
from models import LagrangianReturns, TabularModel, Trajectory, one_hot, sample_index
from uncertainty_set import UncertaintySet

logger = logging.getLogger(__name__)

PRETRAIN_TOLERANCE = 0.005
PRETRAIN_MAX_ITERS = 50_000
PRETRAIN_LR = 0.001
RESTORE_LR = 0.1
RESTORE_MAX_ITERS = 500


def adversary_input(state: int, action: int, n_states: int, n_actions: int) -> np.ndarray:
    """One-hot state concatenated with one-hot action."""
    return np.concatenate([one_hot(state, n_states), one_hot(action, n_actions)])


def adversary_batch(states: Sequence[int], actions: Sequence[int],
                    n_states: int, n_actions: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    batch = np.zeros((len(states), n_states + n_actions))
    batch[np.arange(len(states)), states] = 1.0
    batch[np.arange(len(states)), n_states + actions] = 1.0
    return batch


def all_pairs(nominal: TabularModel) -> Tuple[np.ndarray, np.ndarray]:
    states, actions = np.meshgrid(np.arange(nominal.n_states), np.arange(nominal.n_actions), indexing="ij")
    return states.ravel(), actions.ravel()


def make_adversary(nominal: TabularModel, hidden_width: int, rng: np.random.Generator) -> DiffNet:
    return DiffNet(nominal.n_states + nominal.n_actions, nominal.width, hidden_width,
                   head="softmax", rng=rng)


def adversary_row(adv: DiffNet, nominal: TabularModel, state: int, action: int) -> np.ndarray:
    """Support-aligned successor distribution pi_adv(. | s, a)."""
    x = adversary_input(state, action, nominal.n_states, nominal.n_actions)
    return adv.forward(x, nominal.mask(state, action))


def sample_successor(adv: DiffNet, nominal: TabularModel, state: int, action: int,
                     rng: np.random.Generator) -> Tuple[int, int, np.ndarray]:
    """Draw s' from the adversary; returns (s', support position, row)."""
    row = adversary_row(adv, nominal, state, action)
    position = sample_index(row, rng)
    return int(nominal.support[state, action, position]), position, row


@dataclass
class PretrainReport:
    iterations: int
    final_mae: float
    converged: bool
    history: List[float] = field(default_factory=list)


def adversary_pretrain(
    adv: DiffNet,
    nominal: TabularModel,
    tolerance: float = PRETRAIN_TOLERANCE,
    max_iters: int = PRETRAIN_MAX_ITERS,
    lr: float = PRETRAIN_LR,
) -> Tuple[DiffNet, PretrainReport]:
    """Fit pi_adv to the nominal rows over B = S x A by minimising the mean absolute error."""
    if adv.output_width != nominal.width:
        raise ValueError(f"adversary width {adv.output_width} != nominal support width {nominal.width}")
    n_states, n_actions = nominal.n_states, nominal.n_actions
    batch = adversary_batch(*all_pairs(nominal), n_states, n_actions)
    masks = (nominal.support >= 0).reshape(-1, nominal.width)
    targets = nominal.probs.reshape(-1, nominal.width)
    sizes = masks.sum(axis=1, keepdims=True)
    adam = AdamState.for_net(adv, lr=lr)

    history: List[float] = []
    converged = False
    iteration = 0
    row_mae = np.zeros(len(batch))
    for iteration in range(max_iters + 1):
        diff = adv.forward(batch, masks) - targets
        row_mae = (np.abs(diff) * masks).sum(axis=1) / sizes[:, 0]
        history.append(float(row_mae.mean()))
        if row_mae.max() < tolerance:
            converged = True
            break
        if iteration == max_iters:
            break
        grad_out = np.sign(diff) * masks / (sizes * len(batch))
        adv.params += adam.delta(adv.output_grad(batch, grad_out, masks))

    report = PretrainReport(iterations=iteration, final_mae=float(row_mae.max()),
                            converged=converged, history=history)
    if converged:
        logger.info(f"Adversary matched the nominal model after {iteration} iterations")
    else:
        logger.warning(f"Adversary pretraining stopped after {iteration} iterations "
                       f"with worst row MAE {report.final_mae:.4f} (target {tolerance})")
    return adv, report


def _row_excess(adv: DiffNet, uset: UncertaintySet, states: Sequence[int], actions: Sequence[int]):
    """Batch, masks, row - nominal and ||row - nominal||_1 - alpha for each (s, a)."""
    nominal = uset.nominal
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    batch = adversary_batch(states, actions, nominal.n_states, nominal.n_actions)
    masks = nominal.support[states, actions] >= 0
    diff = adv.forward(batch, masks) - nominal.probs[states, actions]
    excess = np.abs(diff).sum(axis=1) - uset.budget[states, actions]
    return batch, masks, diff, excess


def deviation_objective_grad(adv: DiffNet, uset: UncertaintySet, states: Sequence[int],
                             actions: Sequence[int]) -> Tuple[np.ndarray, float]:
    """Mean hinge deviation max(0, ||pi_adv(s,a) - P_hat(s,a)||_1 - alpha(s,a)) and its gradient."""
    batch, masks, diff, excess = _row_excess(adv, uset, states, actions)
    active = excess > 0.0
    objective = float(np.mean(np.where(active, excess, 0.0)))
    if not np.any(active):
        return np.zeros(adv.parameter_count), objective
    grad_out = np.sign(diff) * active[:, None] * masks / len(excess)
    return adv.output_grad(batch, grad_out, masks), objective


def restore_feasibility(
    adv: DiffNet,
    uset: UncertaintySet,
    lr: float = RESTORE_LR,
    max_iters: int = RESTORE_MAX_ITERS,
) -> Tuple[DiffNet, int]:
    """Descend the hinge over every (s, a) pair until no adversary row leaves its L1 ball.

    Each step follows the mean hinge gradient of the violating rows only.
    Returns the adversary and the number of steps taken.
    """
    states, actions = all_pairs(uset.nominal)
    for iteration in range(max_iters):
        batch, masks, diff, excess = _row_excess(adv, uset, states, actions)
        active = excess > 0.0
        if not np.any(active):
            return adv, iteration
        grad_out = np.sign(diff) * active[:, None] * masks / active.sum()
        adv.params -= lr * adv.output_grad(batch, grad_out, masks)
    excess = _row_excess(adv, uset, states, actions)[3]
    if excess.max() > 0.0:
        logger.debug(f"Adversary still {excess.max():.4f} outside its ball after {max_iters} restoring steps")
    return adv, max_iters


def nominal_deviation_grad(adv: DiffNet, uset: UncertaintySet, n_samp: int,
                           rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """Hinge-deviation gradient on a fresh uniformly random batch of (s, a) pairs."""
    if n_samp < 1:
        raise ValueError(f"n_samp must be >= 1, got {n_samp}")
    states = rng.integers(uset.nominal.n_states, size=n_samp)
    actions = rng.integers(uset.nominal.n_actions, size=n_samp)
    return deviation_objective_grad(adv, uset, states, actions)


def adversary_step(
    traj: Trajectory,
    returns: List[LagrangianReturns],
    lag: LagrangeState,
    adv: DiffNet,
    uset: UncertaintySet,
    adversary_lr: float,
    multiplier_lr: float,
    n_samp: int,
    rng: np.random.Generator,
    update_multiplier: bool = True,
) -> Tuple[DiffNet, LagrangeState]:
    """Descend the adversary Lagrangian along the trajectory in reverse order.

    Step t weights the score of s_{t+1} by the Lagrangian return from the
    next state (0 at the final step). The step direction is divided by
    1 + lambda_adv, so a large multiplier leaves the hinge term in charge
    and shrinks the return-driven move towards zero.
    """
    if len(traj.adversary_grads) != traj.stop:
        raise ValueError("adversary gradient cache must cover every trajectory step")
    nominal = uset.nominal
    next_return = 0.0
    for t in range(traj.stop - 1, -1, -1):
        deviation_grad, _ = nominal_deviation_grad(adv, uset, n_samp, rng)
        weight = lag.adversary_multiplier
        adv.params -= adversary_lr * (next_return * traj.adversary_grads[t]
                                      + weight * deviation_grad) / (1.0 + weight)
        s, a = traj.states[t], traj.actions[t]
        deviation = uset.deviation(s, a, adversary_row(adv, nominal, s, a))
        if update_multiplier:
            lag.adversary_multiplier = lag.clamp(
                lag.adversary_multiplier + multiplier_lr * (deviation - uset.alpha(s, a))
            )
        next_return = returns[t].combined
    return adv, lag


def sampled_constraint_excess(adv: DiffNet, uset: UncertaintySet, n_pairs: int,
                              rng: np.random.Generator) -> np.ndarray:
    """||pi_adv(s,a) - P_hat(s,a)||_1 - alpha(s,a) on random (s, a) pairs."""
    states = rng.integers(uset.nominal.n_states, size=n_pairs)
    actions = rng.integers(uset.nominal.n_actions, size=n_pairs)
    return _row_excess(adv, uset, states, actions)[3]


def mean_row_distance(adv: DiffNet, nominal: TabularModel) -> float:
    """Mean L1 distance between adversary rows and nominal rows over all pairs."""
    batch = adversary_batch(*all_pairs(nominal), nominal.n_states, nominal.n_actions)
    masks = (nominal.support >= 0).reshape(-1, nominal.width)
    rows = adv.forward(batch, masks)
    return float(np.abs(rows - nominal.probs.reshape(-1, nominal.width)).sum(axis=1).mean())
