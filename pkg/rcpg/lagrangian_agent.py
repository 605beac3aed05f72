"""Lagrangian policy update shared by PG, CPG, the RCPG variants and Adversarial RCPG."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

from diff_net import DiffNet
from models import LagrangianReturns, Trajectory

LAMBDA_MAX = 500.0


@dataclass
class LagrangeState:
    """Policy multiplier lambda and adversary multiplier lambda_adv, both kept in [0, limit]."""

    multiplier: float = 0.0
    adversary_multiplier: float = 0.0
    limit: float = LAMBDA_MAX

    def __post_init__(self):
        self.multiplier = self.clamp(self.multiplier)
        self.adversary_multiplier = self.clamp(self.adversary_multiplier)

    def clamp(self, value: float) -> float:
        return float(min(max(value, 0.0), self.limit))


def policy_step(
    traj: Trajectory,
    returns: List[LagrangianReturns],
    lag: LagrangeState,
    net: DiffNet,
    policy_lr: float,
    multiplier_lr: float,
    entropy_weight: float,
    budget: float,
    update_multiplier: bool = True,
) -> Tuple[DiffNet, LagrangeState]:
    """Lagrangian REINFORCE ascent on theta, then one episodic ascent step on lambda."""
    if len(returns) != traj.stop or len(traj.policy_grads) != traj.stop:
        raise ValueError("returns and gradient caches must cover every trajectory step")
    for t in range(traj.stop - 1, -1, -1):
        step = returns[t].combined * traj.policy_grads[t]
        if entropy_weight:
            step = step + entropy_weight * traj.entropy_grads[t]
        net.params += policy_lr * step
    if update_multiplier:
        lag.multiplier = lag.clamp(lag.multiplier + multiplier_lr * (returns[0].cost - budget))
    return net, lag
