"""Policy test phase: greedy rollouts on perturbed dynamics, value/overshoot and penalised return."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field

from diff_net import DiffNet
from environments import (
    GridEnv,
    InventoryEnv,
    InventorySpec,
    cell_tables,
    grid_spec,
    load_cell_tables,
    make_environment,
    random_offset_perturbation,
    worst_case_arrow_perturbation,
)
from models import undiscounted_budget

logger = logging.getLogger(__name__)

PENALTY_MULTIPLIER = 500.0
RESULT_COLUMNS = ["algorithm", "domain", "test_id", "param_name", "param_value",
                  "seed", "repeat", "value", "constraint_cost", "overshoot"]
SUMMARY_COLUMNS = ["algorithm", "domain", "test_id", "param_name", "param_value", "n_seeds",
                   "mean_value", "stderr_value", "mean_constraint_cost", "stderr_constraint_cost",
                   "mean_overshoot", "stderr_overshoot", "penalised_return", "stderr_penalised_return"]
POOLED = "ALL"
POOLING_NOTE = "penalised_return rows with param_value=ALL pool every setting of a test with uniform weight"

SettingValue = Union[float, Tuple[float, float]]


def greedy_rollout(policy: DiffNet, env, horizon: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
    """Undiscounted (sum r, sum c) from s0 taking the argmax action (lowest index on ties)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    rcmdp = env.rcmdp
    horizon = rcmdp.horizon if horizon is None else horizon
    state = rcmdp.initial_state
    value = 0.0
    cost = 0.0
    for _ in range(horizon):
        if rcmdp.is_terminal(state):
            break
        action = int(np.argmax(policy.forward(rcmdp.encode_state(state))))
        state, reward, step_cost = env.step(state, action, rng)
        value += reward
        cost += step_cost
    return value, cost


def penalised_return(value: float, cost: float, eval_budget: float,
                     penalty: float = PENALTY_MULTIPLIER) -> float:
    return value - penalty * max(0.0, cost - eval_budget)


def overshoot(cost: float, eval_budget: float) -> float:
    return cost - eval_budget


class TestGrid(BaseModel):
    """One perturbation test: a parameter axis swept over `values`."""

    domain: str
    test_id: str
    param_name: str
    values: List[SettingValue]
    runs_per_setting: int = Field(50, gt=0)


def build_test_grids(domain: str, n_states: int = 20, runs_per_setting: int = 50) -> List[TestGrid]:
    if domain == "inventory":
        demand = [(mu, sigma) for mu in (n_states / 6, n_states / 4, n_states / 3)
                  for sigma in (n_states / 8, n_states / 6, n_states / 4)]
        return [TestGrid(domain=domain, test_id="IM", param_name="mu/sigma", values=demand,
                         runs_per_setting=runs_per_setting)]
    p_success = [0.6, 0.7, 0.8, 0.9, 1.0]
    if domain == "nav1":
        return [
            TestGrid(domain=domain, test_id="1A", param_name="p_success", values=p_success,
                     runs_per_setting=runs_per_setting),
            TestGrid(domain=domain, test_id="1B", param_name="n_perturbations",
                     values=[5, 10, 20, 50, 100], runs_per_setting=runs_per_setting),
        ]
    if domain == "nav2":
        return [
            TestGrid(domain=domain, test_id="2A", param_name="p_success", values=p_success,
                     runs_per_setting=runs_per_setting),
            TestGrid(domain=domain, test_id="2B", param_name="n_perturbations",
                     values=[5, 10, 15, 20, 25], runs_per_setting=runs_per_setting),
        ]
    raise ValueError(f"unknown domain {domain!r}")


def setting_label(value: SettingValue) -> str:
    if isinstance(value, (tuple, list)):
        return "/".join(f"{float(v):.4g}" for v in value)
    return f"{float(value):g}"


def make_test_env(domain: str, test_id: str, value: SettingValue, rng: np.random.Generator,
                  n_states: int = 20, tables_path: Optional[str] = None):
    """Perturbed test dynamics for one setting; B tests draw their perturbations from `rng`."""
    if domain == "inventory":
        return InventoryEnv(InventorySpec(n_states=n_states), demand=tuple(value))
    tables = load_cell_tables(tables_path) if tables_path else cell_tables(domain)
    if test_id.endswith("A"):
        return GridEnv(grid_spec(domain, p_success=float(value), tables=tables))
    if test_id == "1B":
        return GridEnv(grid_spec(domain, p_success=0.8, tables=tables),
                       random_offset_perturbation(int(value), rng))
    if test_id == "2B":
        return GridEnv(grid_spec(domain, p_success=0.8, tables=tables),
                       worst_case_arrow_perturbation(int(value), tables[2], rng))
    raise ValueError(f"unknown test {test_id!r} for domain {domain!r}")


def evaluation_budget(domain: str, n_states: int = 20, tables_path: Optional[str] = None) -> float:
    """d_eval: the training budget corrected for undiscounted test sums."""
    rcmdp = make_environment(domain, n_states, tables_path).rcmdp
    return undiscounted_budget(rcmdp.budget, rcmdp.discount, rcmdp.horizon)


def _run_setting(snapshot: bytes, algorithm: str, grid: TestGrid, test_index: int, setting: int,
                 seed: int, base_seed: int, n_states: int, tables_path: Optional[str],
                 eval_budget: float) -> List[Dict]:
    policy = DiffNet.from_bytes(snapshot)
    value = grid.values[setting]
    rows = []
    for repeat in range(grid.runs_per_setting):
        # same draws for every algorithm so perturbations are shared across the comparison
        rng = np.random.default_rng([base_seed, test_index, setting, seed, repeat])
        env = make_test_env(grid.domain, grid.test_id, value, rng, n_states, tables_path)
        v, c = greedy_rollout(policy, env, rng=rng)
        rows.append({
            "algorithm": algorithm, "domain": grid.domain, "test_id": grid.test_id,
            "param_name": grid.param_name, "param_value": setting_label(value),
            "seed": seed, "repeat": repeat, "value": v, "constraint_cost": c,
            "overshoot": overshoot(c, eval_budget), "_setting": setting, "_test": test_index,
        })
    return rows


def _stderr(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def summarize(results: pd.DataFrame, penalty: float = PENALTY_MULTIPLIER) -> pd.DataFrame:
    """Per-setting means and standard errors over training-seed means, plus pooled R_pen rows."""
    keys = ["algorithm", "domain", "test_id", "param_name", "param_value"]
    frame = results.copy()
    frame["_order"] = np.arange(len(frame))
    per_seed = (
        frame.groupby(keys + ["seed"], sort=False)
        .agg(value=("value", "mean"), constraint_cost=("constraint_cost", "mean"),
             overshoot=("overshoot", "mean"), _order=("_order", "min"))
        .reset_index()
        .sort_values("_order", kind="stable")
    )
    per_seed["penalised_return"] = per_seed["value"] - penalty * per_seed["overshoot"].clip(lower=0.0)

    rows = []
    for key, group in per_seed.groupby(keys, sort=False):
        rows.append(dict(zip(keys, key), **{
            "n_seeds": len(group),
            "mean_value": group["value"].mean(), "stderr_value": _stderr(group["value"].to_numpy()),
            "mean_constraint_cost": group["constraint_cost"].mean(),
            "stderr_constraint_cost": _stderr(group["constraint_cost"].to_numpy()),
            "mean_overshoot": group["overshoot"].mean(),
            "stderr_overshoot": _stderr(group["overshoot"].to_numpy()),
            "penalised_return": group["penalised_return"].mean(),
            "stderr_penalised_return": _stderr(group["penalised_return"].to_numpy()),
        }))

    test_keys = ["algorithm", "domain", "test_id", "param_name"]
    for key, group in per_seed.groupby(test_keys, sort=False):
        pooled = group.groupby("seed", sort=True)["penalised_return"].mean().to_numpy()
        rows.append(dict(zip(test_keys, key), **{
            "param_value": POOLED, "n_seeds": len(pooled),
            "mean_value": np.nan, "stderr_value": np.nan,
            "mean_constraint_cost": np.nan, "stderr_constraint_cost": np.nan,
            "mean_overshoot": np.nan, "stderr_overshoot": np.nan,
            "penalised_return": float(pooled.mean()), "stderr_penalised_return": _stderr(pooled),
        }))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


@dataclass
class RunReport:
    results: pd.DataFrame
    summary: pd.DataFrame
    notes: List[str] = field(default_factory=lambda: [POOLING_NOTE])

    def write_summary(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        summary_path = os.path.join(out_dir, "summary.csv")
        with open(summary_path, "w", newline="") as f:
            for note in self.notes:
                f.write(f"# {note}\n")
            self.summary.to_csv(f, index=False, float_format="%.10g")
        return summary_path

    def write(self, out_dir: str) -> Tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        results_path = os.path.join(out_dir, "results.csv")
        self.results.to_csv(results_path, index=False, float_format="%.10g")
        return results_path, self.write_summary(out_dir)


def read_summary(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def run_test_suite(
    policies: Mapping[str, Mapping[int, DiffNet]],
    grids: List[TestGrid],
    n_states: int = 20,
    base_seed: int = 0,
    jobs: int = 1,
    tables_path: Optional[str] = None,
) -> RunReport:
    """Greedy rollouts of every (algorithm, seed) snapshot on every setting of every grid."""
    if not grids:
        raise ValueError("no test grids given")
    domain = grids[0].domain
    for algorithm, per_seed in policies.items():
        if not per_seed:
            raise ValueError(f"missing snapshot: no trained policies for {algorithm}")
    eval_budget = evaluation_budget(domain, n_states, tables_path)

    tasks = []
    for algorithm in sorted(policies):
        for seed in sorted(policies[algorithm]):
            snapshot = policies[algorithm][seed].to_bytes()
            for test_index, grid in enumerate(grids):
                for setting in range(len(grid.values)):
                    tasks.append(delayed(_run_setting)(
                        snapshot, algorithm, grid, test_index, setting, seed,
                        base_seed, n_states, tables_path, eval_budget,
                    ))
    logger.info(f"Running {len(tasks)} test tasks on {domain} with {jobs} job(s)")
    chunks = Parallel(n_jobs=jobs)(tasks)

    frame = pd.DataFrame([row for chunk in chunks for row in chunk])
    frame = frame.sort_values(["algorithm", "_test", "_setting", "seed", "repeat"], kind="stable")
    results = frame[RESULT_COLUMNS].reset_index(drop=True)
    summary = summarize(results)
    logger.info(f"Test suite finished: {len(results)} rollouts")
    return RunReport(results=results, summary=summary)
