"""Training loop for PG, CPG, the three RCPG selectors and Adversarial RCPG."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from adversary_agent import (
    PRETRAIN_MAX_ITERS,
    PRETRAIN_TOLERANCE,
    RESTORE_LR,
    RESTORE_MAX_ITERS,
    PretrainReport,
    adversary_input,
    adversary_pretrain,
    adversary_step,
    make_adversary,
    restore_feasibility,
)
from diff_net import AdamState, DiffNet, critic_fit_episode, critic_table, scheduled_rate
from lagrangian_agent import LAMBDA_MAX, LagrangeState, policy_step
from models import Rcmdp, TabularModel, Trajectory, one_hot, returns_backward, sample_index, undiscounted_budget
from uncertainty_set import UncertaintySet, WorstCaseMode, select_worst_model

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 100
METRIC_COLUMNS = ["episode", "value", "constraint_cost", "overshoot",
                  "lambda", "lambda_adv", "mean_l1_deviation"]


class Algorithm(str, Enum):
    PG = "pg"
    CPG = "cpg"
    RCPG_VALUE = "rcpg-value"
    RCPG_CONSTRAINT = "rcpg-constraint"
    RCPG_LAGRANGIAN = "rcpg-lagrangian"
    ADV_RCPG = "adv-rcpg"


WORST_CASE_MODES: Dict[Algorithm, WorstCaseMode] = {
    Algorithm.RCPG_VALUE: WorstCaseMode.VALUE,
    Algorithm.RCPG_CONSTRAINT: WorstCaseMode.CONSTRAINT,
    Algorithm.RCPG_LAGRANGIAN: WorstCaseMode.LAGRANGIAN,
}
ROBUST_ALGORITHMS = frozenset(WORST_CASE_MODES) | {Algorithm.ADV_RCPG}


class TrainerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    algorithm: Algorithm
    episodes: int = Field(5000, gt=0)
    nominal_episodes: int = Field(100, ge=0)
    policy_lr: float = Field(0.001, gt=0)
    multiplier_lr: float = Field(0.0001, gt=0)
    adversary_lr: float = Field(0.001, gt=0)
    adversary_multiplier_lr: float = Field(0.0001, gt=0)
    critic_lr: float = Field(0.001, gt=0)
    entropy_weight: float = Field(5.0, ge=0)
    lambda_init: float = Field(1.0, ge=0)
    lambda_adv_init: float = Field(1.0, ge=0)
    lambda_max: float = Field(LAMBDA_MAX, gt=0)
    hidden_width: int = Field(100, gt=0)
    n_samp: int = Field(32, ge=1)
    pretrain_tolerance: float = Field(PRETRAIN_TOLERANCE, gt=0)
    pretrain_max_iters: int = Field(PRETRAIN_MAX_ITERS, ge=0)
    restore_lr: float = Field(RESTORE_LR, gt=0)
    restore_max_iters: int = Field(RESTORE_MAX_ITERS, ge=0)
    pin_multiplier: bool = False
    pin_adversary_multiplier: bool = False
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _warmup_fits(self):
        if self.nominal_episodes > self.episodes:
            raise ValueError(f"nominal_episodes ({self.nominal_episodes}) exceeds episodes ({self.episodes})")
        return self


@dataclass
class TrainingResult:
    algorithm: Algorithm
    policy: DiffNet
    lagrange: LagrangeState
    metrics: pd.DataFrame
    adversary: Optional[DiffNet] = None
    value_critic: Optional[DiffNet] = None
    cost_critic: Optional[DiffNet] = None
    pretrain: Optional[PretrainReport] = None


def rollout(
    rcmdp: Rcmdp,
    policy: DiffNet,
    rng: np.random.Generator,
    nominal: TabularModel,
    model: Optional[TabularModel] = None,
    adversary: Optional[DiffNet] = None,
    start: Optional[int] = None,
) -> Trajectory:
    """Simulate one training episode on `model` (or on the adversary), caching score gradients."""
    if adversary is None and model is None:
        model = nominal
    traj = Trajectory()
    state = rcmdp.sample_start(rng) if start is None else start
    for _ in range(rcmdp.horizon):
        if rcmdp.is_terminal(state):
            break
        x = rcmdp.encode_state(state)
        action = sample_index(policy.forward(x), rng)
        score, entropy = policy.score_and_entropy_grads(x, action)

        if adversary is not None:
            xa = adversary_input(state, action, nominal.n_states, nominal.n_actions)
            mask = nominal.mask(state, action)
            row = adversary.forward(xa, mask)
            position = sample_index(row, rng)
            adv_score, _ = adversary.log_prob_grad(xa, position, mask)
            traj.adversary_grads.append(adv_score)
        else:
            row = model.probs[state, action]
            position = sample_index(row, rng)
        next_state = int(nominal.support[state, action, position])

        traj.append(state, action, rcmdp.reward(state, action, next_state),
                    rcmdp.constraint_cost(state, action, next_state), next_state)
        traj.policy_grads.append(score)
        traj.entropy_grads.append(entropy)
        traj.deviations.append(float(np.abs(row - nominal.probs[state, action]).sum()))
        state = next_state
    return traj


def _scheduled_rates(cfg: TrainerConfig, episode: int) -> Dict[str, float]:
    return {
        "policy": scheduled_rate(cfg.policy_lr, episode),
        "multiplier": scheduled_rate(cfg.multiplier_lr, episode),
        "adversary": scheduled_rate(cfg.adversary_lr, episode),
        "adversary_multiplier": scheduled_rate(cfg.adversary_multiplier_lr, episode),
    }


def run_training(
    cfg: TrainerConfig,
    rcmdp: Rcmdp,
    nominal: TabularModel,
    uset: Optional[UncertaintySet] = None,
) -> TrainingResult:
    """Train one policy with the configured algorithm; returns it with per-episode metrics."""
    algorithm = Algorithm(cfg.algorithm)
    if algorithm in ROBUST_ALGORITHMS and uset is None:
        raise ValueError(f"{algorithm.value} needs an uncertainty set")
    if (nominal.n_states, nominal.n_actions) != (rcmdp.n_states, rcmdp.n_actions):
        raise ValueError(
            f"nominal model is {nominal.n_states}x{nominal.n_actions}, "
            f"task is {rcmdp.n_states}x{rcmdp.n_actions}"
        )
    if uset is not None and uset.nominal.support.shape != nominal.support.shape:
        raise ValueError("uncertainty set and nominal model disagree on the successor support")

    # fixed stream layout across algorithms keeps same-seed runs comparable
    policy_seed, value_seed, cost_seed, adversary_seed, rollout_seed = np.random.SeedSequence(cfg.seed).spawn(5)
    rng = np.random.default_rng(rollout_seed)
    policy = DiffNet(rcmdp.policy_input_width, rcmdp.n_actions, cfg.hidden_width,
                     head="softmax", rng=np.random.default_rng(policy_seed))
    lag = LagrangeState(
        multiplier=0.0 if algorithm is Algorithm.PG else cfg.lambda_init,
        adversary_multiplier=cfg.lambda_adv_init if algorithm is Algorithm.ADV_RCPG else 0.0,
        limit=cfg.lambda_max,
    )
    eval_budget = undiscounted_budget(rcmdp.budget, rcmdp.discount, rcmdp.horizon)
    update_multiplier = algorithm is not Algorithm.PG and not cfg.pin_multiplier

    value_critic = cost_critic = None
    worst: Optional[TabularModel] = None
    mode = WORST_CASE_MODES.get(algorithm)
    if mode is not None:
        value_critic = DiffNet(rcmdp.n_states, 1, cfg.hidden_width, head="linear",
                               rng=np.random.default_rng(value_seed))
        cost_critic = DiffNet(rcmdp.n_states, 1, cfg.hidden_width, head="linear",
                              rng=np.random.default_rng(cost_seed))
        value_adam = AdamState.for_net(value_critic, lr=cfg.critic_lr)
        cost_adam = AdamState.for_net(cost_critic, lr=cfg.critic_lr)
        worst = select_worst_model(
            uset, (critic_table(value_critic, rcmdp.n_states), critic_table(cost_critic, rcmdp.n_states)),
            lag.multiplier, mode,
        )

    adversary = None
    pretrain = None
    if algorithm is Algorithm.ADV_RCPG:
        adversary = make_adversary(nominal, cfg.hidden_width, np.random.default_rng(adversary_seed))
        adversary, pretrain = adversary_pretrain(adversary, nominal, cfg.pretrain_tolerance,
                                                 cfg.pretrain_max_iters)

    logger.info(f"Training {algorithm.value} (seed {cfg.seed}) for {cfg.episodes} episodes")
    rows: List[Dict[str, float]] = []
    for episode in range(cfg.episodes):
        rates = _scheduled_rates(cfg, episode)
        adversarial = adversary is not None and episode >= cfg.nominal_episodes
        if adversarial:
            traj = rollout(rcmdp, policy, rng, nominal, adversary=adversary)
        else:
            traj = rollout(rcmdp, policy, rng, nominal, model=worst if worst is not None else nominal)

        returns = returns_backward(traj, rcmdp.discount, lag.multiplier)
        policy, lag = policy_step(traj, returns, lag, policy, rates["policy"], rates["multiplier"],
                                  cfg.entropy_weight, rcmdp.budget, update_multiplier)

        if mode is not None:
            inputs = [one_hot(s, rcmdp.n_states) for s in traj.states]
            value_critic, _ = critic_fit_episode(value_critic, inputs, [r.value for r in returns], value_adam)
            cost_critic, _ = critic_fit_episode(cost_critic, inputs, [r.cost for r in returns], cost_adam)
            worst = select_worst_model(
                uset,
                (critic_table(value_critic, rcmdp.n_states), critic_table(cost_critic, rcmdp.n_states)),
                lag.multiplier, mode,
            )

        if adversarial:
            adversary, lag = adversary_step(
                traj, returns, lag, adversary, uset, rates["adversary"],
                rates["adversary_multiplier"], cfg.n_samp, rng,
                update_multiplier=not cfg.pin_adversary_multiplier,
            )
            adversary, _ = restore_feasibility(adversary, uset, cfg.restore_lr, cfg.restore_max_iters)

        total_cost = traj.total_cost()
        rows.append({
            "episode": episode,
            "value": traj.total_reward(),
            "constraint_cost": total_cost,
            "overshoot": total_cost - eval_budget,
            "lambda": lag.multiplier,
            "lambda_adv": lag.adversary_multiplier,
            "mean_l1_deviation": float(np.mean(traj.deviations)),
        })
        if (episode + 1) % PROGRESS_EVERY == 0:
            recent = rows[-PROGRESS_EVERY:]
            logger.debug(
                f"{algorithm.value} seed {cfg.seed} episode {episode + 1}: "
                f"value {np.mean([r['value'] for r in recent]):.2f}, "
                f"cost {np.mean([r['constraint_cost'] for r in recent]):.2f}, lambda {lag.multiplier:.3f}"
            )

    logger.info(f"Finished {algorithm.value} seed {cfg.seed}: lambda {lag.multiplier:.3f}, "
                f"lambda_adv {lag.adversary_multiplier:.3f}")
    return TrainingResult(
        algorithm=algorithm,
        policy=policy,
        lagrange=lag,
        metrics=pd.DataFrame(rows, columns=METRIC_COLUMNS),
        adversary=adversary,
        value_critic=value_critic,
        cost_critic=cost_critic,
        pretrain=pretrain,
    )
