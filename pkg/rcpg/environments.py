"""Benchmark RCMDPs: Inventory Management and Safe Navigation 1/2.

Each domain provides its ground-truth data-collection dynamics, the
perturbed dynamics used in the policy tests, the successor support used for
uncertainty sets, and an `Rcmdp` describing rewards and constraint-costs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from models import Rcmdp, TabularModel, Trajectory

logger = logging.getLogger(__name__)

DOMAINS = ("inventory", "nav1", "nav2")
DEFAULT_INVENTORY_STATES = 20

# ---------------------------------------------------------------------------
# Inventory management
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InventorySpec:
    n_states: int = DEFAULT_INVENTORY_STATES
    purchase_cost: float = 2.49
    sale_price: float = 3.99
    holding_cost: float = 0.03
    horizon: int = 100
    discount: float = 0.99
    budget: float = 6.0
    # purchasing limit is tied to the data-collection demand law
    limit_mean: Optional[float] = None
    limit_std: Optional[float] = None

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("inventory needs at least two states")
        if self.limit_mean is None:
            object.__setattr__(self, "limit_mean", self.n_states / 4.0)
        if self.limit_std is None:
            object.__setattr__(self, "limit_std", self.n_states / 6.0)

    @property
    def training_demand(self) -> Tuple[float, float]:
        return self.n_states / 4.0, self.n_states / 6.0

    def limit(self, state: int) -> float:
        if state <= 2:
            return self.limit_mean + self.limit_std
        return self.limit_mean

    def effective_order(self, state: int, action: int) -> int:
        return min(action, self.n_states - 1 - state)

    def reward(self, state: int, action: int, next_state: int) -> float:
        """Realised revenue minus ordering and holding costs for a transition."""
        ordered = self.effective_order(state, action)
        sold = max(0, state + ordered - next_state)
        return self.sale_price * sold - self.purchase_cost * ordered - self.holding_cost * next_state

    def constraint_cost(self, state: int, action: int, next_state: int = 0) -> float:
        return max(0.0, action - self.limit(state))


def inventory_step(state: int, action: int, rng: np.random.Generator,
                   demand: Tuple[float, float],
                   spec: InventorySpec = InventorySpec()) -> Tuple[int, float, float]:
    """Sample one inventory transition under a Gaussian demand (mu, sigma)."""
    mu, sigma = demand
    ordered = spec.effective_order(state, action)
    drawn = int(np.clip(np.round(rng.normal(mu, sigma)), 0, spec.n_states - 1))
    sold = min(state + ordered, drawn)
    next_state = state + ordered - sold
    return next_state, spec.reward(state, action, next_state), spec.constraint_cost(state, action)


def demand_pmf(n_states: int, mu: float, sigma: float) -> np.ndarray:
    """Law of the rounded Gaussian demand clipped to [0, S-1]."""
    edges = np.arange(n_states + 1) - 0.5
    cdf = norm.cdf(edges, loc=mu, scale=sigma)
    cdf[0] = 0.0
    cdf[-1] = 1.0
    return np.diff(cdf)


def inventory_support(n_states: int) -> np.ndarray:
    return np.tile(np.arange(n_states), (n_states, n_states, 1))


def inventory_true_model(spec: InventorySpec, demand: Tuple[float, float]) -> TabularModel:
    """Exact transition law of `inventory_step` as a tabular model."""
    n = spec.n_states
    pmf = demand_pmf(n, *demand)
    tail = np.concatenate([np.cumsum(pmf[::-1])[::-1], [0.0]])  # P(D >= k)
    probs = np.zeros((n, n, n))
    for s in range(n):
        for a in range(n):
            stock = s + spec.effective_order(s, a)
            for nxt in range(1, stock + 1):
                probs[s, a, nxt] = pmf[stock - nxt]
            probs[s, a, 0] = tail[stock]
    return TabularModel(inventory_support(n), probs)


def inventory_rcmdp(spec: InventorySpec = InventorySpec()) -> Rcmdp:
    return Rcmdp(
        n_states=spec.n_states,
        n_actions=spec.n_states,
        reward=spec.reward,
        constraint_cost=spec.constraint_cost,
        budget=spec.budget,
        discount=spec.discount,
        horizon=spec.horizon,
        is_terminal=lambda s: False,
        initial_state=0,
    )


class InventoryEnv:
    def __init__(self, spec: InventorySpec, demand: Optional[Tuple[float, float]] = None):
        self.spec = spec
        self.demand = demand if demand is not None else spec.training_demand
        self.rcmdp = inventory_rcmdp(spec)

    def step(self, state: int, action: int, rng: np.random.Generator) -> Tuple[int, float, float]:
        return inventory_step(state, action, rng, self.demand, self.spec)


# ---------------------------------------------------------------------------
# Safe navigation
# ---------------------------------------------------------------------------

GRID_SIZE = 5
ACTION_NAMES = ("left", "right", "up", "down")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))
# support positions of a grid row: stay, left, right, up, down
NEIGHBOUR_OFFSETS = ((0, 0), (-1, 0), (1, 0), (0, 1), (0, -1))
ARROW_KINDS = {"left": (-1, 0), "right": (1, 0), "up": (0, 1), "down": (0, -1), "loop": (0, 0)}

Cell = Tuple[int, int]


def state_index(pos: Cell) -> int:
    return pos[0] + GRID_SIZE * pos[1]


def state_position(state: int) -> Cell:
    return state % GRID_SIZE, state // GRID_SIZE


def clamp(pos: Cell) -> Cell:
    return (min(max(pos[0], 0), GRID_SIZE - 1), min(max(pos[1], 0), GRID_SIZE - 1))


def on_grid(pos: Cell) -> bool:
    return 0 <= pos[0] < GRID_SIZE and 0 <= pos[1] < GRID_SIZE


def neighbourhood(pos: Cell) -> List[Cell]:
    """Von Neumann neighbourhood N(s) inside the grid, self included."""
    cells = [(pos[0] + dx, pos[1] + dy) for dx, dy in NEIGHBOUR_OFFSETS]
    return [c for c in cells if on_grid(c)]


NAV1_GREY = frozenset({(1, 0), (1, 1), (1, 2), (3, 2), (3, 3), (3, 4)})
NAV2_GREY = frozenset({(1, 0), (1, 1), (1, 2), (2, 2), (3, 2), (3, 3), (3, 4)})
NAV2_RED = frozenset({(0, 4), (1, 4), (3, 0), (4, 0)})
_ARROW_ROWS = {
    0: ("right", "right", "right", "loop", "loop"),
    1: ("down",) * 5,
    2: ("left",) * 5,
    3: ("up", "up", "left", "left", "left"),
    4: ("loop", "loop", "left", "left"),
}
NAV2_ARROWS: Dict[Cell, Cell] = {
    (x, y): ARROW_KINDS[kind] for y, row in _ARROW_ROWS.items() for x, kind in enumerate(row)
}


def cell_tables(task: str) -> Tuple[FrozenSet[Cell], FrozenSet[Cell], Dict[Cell, Cell]]:
    """Grey cells, red cells and worst-case arrows (offsets) of a navigation task."""
    if task == "nav1":
        return NAV1_GREY, frozenset(), {}
    if task == "nav2":
        return NAV2_GREY, NAV2_RED, dict(NAV2_ARROWS)
    raise ValueError(f"unknown navigation task {task!r}")


def load_cell_tables(path: str) -> Tuple[FrozenSet[Cell], FrozenSet[Cell], Dict[Cell, Cell]]:
    """Read an override file with columns x, y, kind (grey, red, left, right, up, down, loop)."""
    table = pd.read_csv(path)
    missing = {"x", "y", "kind"} - set(table.columns)
    if missing:
        raise ValueError(f"cell table {path} lacks columns {sorted(missing)}")
    grey, red, arrows = set(), set(), {}
    for x, y, kind in table[["x", "y", "kind"]].itertuples(index=False):
        cell = (int(x), int(y))
        if not on_grid(cell):
            raise ValueError(f"cell {cell} in {path} is off the grid")
        kind = str(kind).strip().lower()
        if kind == "grey":
            grey.add(cell)
        elif kind == "red":
            red.add(cell)
        elif kind in ARROW_KINDS:
            arrows[cell] = ARROW_KINDS[kind]
        else:
            raise ValueError(f"unknown cell kind {kind!r} in {path}")
    return frozenset(grey), frozenset(red), arrows


@dataclass(frozen=True)
class GridSpec:
    task: str
    grey: FrozenSet[Cell]
    red: FrozenSet[Cell] = frozenset()
    grey_cost: float = 1.0
    red_cost: float = 1.0
    horizon: int = 200
    budget: float = 3.0
    p_success: float = 0.8
    discount: float = 0.99
    start: Cell = (0, 0)
    goal: Cell = (GRID_SIZE - 1, GRID_SIZE - 1)
    arrows: Dict[Cell, Cell] = field(default_factory=dict, hash=False, compare=False)

    def cell_cost(self, pos: Cell) -> float:
        if pos in self.red:
            return self.red_cost
        if pos in self.grey:
            return self.grey_cost
        return 0.0


def grid_spec(task: str, p_success: Optional[float] = None,
              tables: Optional[Tuple[FrozenSet[Cell], FrozenSet[Cell], Dict[Cell, Cell]]] = None) -> GridSpec:
    """Data-collection spec of Safe Navigation 1 or 2."""
    grey, red, arrows = tables if tables is not None else cell_tables(task)
    if task == "nav1":
        spec = GridSpec(task=task, grey=grey, red=red, grey_cost=1.0, horizon=200,
                        budget=3.0, p_success=0.8, arrows=arrows)
    elif task == "nav2":
        spec = GridSpec(task=task, grey=grey, red=red, grey_cost=0.1, red_cost=1.0,
                        horizon=100, budget=0.4, p_success=1.0, arrows=arrows)
    else:
        raise ValueError(f"unknown navigation task {task!r}")
    if p_success is not None:
        spec = GridSpec(**{**spec.__dict__, "p_success": p_success})
    return spec


class StandStill:
    """Failed moves leave the agent in place."""

    def target(self, pos: Cell, action: int, rng: np.random.Generator) -> Cell:
        return pos


@dataclass
class RandomOffset:
    """Failed moves at perturbed pairs transport the agent to s + eps(s,a)."""

    offsets: Dict[Tuple[int, int], Cell]

    def target(self, pos: Cell, action: int, rng: np.random.Generator) -> Cell:
        offset = self.offsets.get((state_index(pos), action))
        if offset is None:
            return pos
        return clamp((pos[0] + offset[0], pos[1] + offset[1]))


@dataclass
class WorstCaseArrow:
    """Failed moves in perturbed states follow the worst-case arrow of that cell."""

    arrows: Dict[Cell, Cell]
    states: FrozenSet[Cell]

    def target(self, pos: Cell, action: int, rng: np.random.Generator) -> Cell:
        if pos not in self.states or pos not in self.arrows:
            return pos
        dx, dy = self.arrows[pos]
        return clamp((pos[0] + dx, pos[1] + dy))


def random_offset_perturbation(n_pairs: int, rng: np.random.Generator) -> RandomOffset:
    """Perturb `n_pairs` state-action pairs drawn without replacement; offsets uniform over N(s)."""
    n_total = GRID_SIZE * GRID_SIZE * len(MOVES)
    chosen = rng.choice(n_total, size=min(n_pairs, n_total), replace=False)
    offsets = {}
    for flat in sorted(int(c) for c in chosen):
        state, action = divmod(flat, len(MOVES))
        pos = state_position(state)
        cells = neighbourhood(pos)
        cell = cells[int(rng.integers(len(cells)))]
        offsets[(state, action)] = (cell[0] - pos[0], cell[1] - pos[1])
    return RandomOffset(offsets)


def worst_case_arrow_perturbation(n_states: int, arrows: Dict[Cell, Cell],
                                  rng: np.random.Generator) -> WorstCaseArrow:
    """Perturb `n_states` grid states drawn without replacement; cells without an arrow stay put."""
    n_cells = GRID_SIZE * GRID_SIZE
    chosen = rng.choice(n_cells, size=min(n_states, n_cells), replace=False)
    return WorstCaseArrow(arrows=arrows, states=frozenset(state_position(int(s)) for s in chosen))


def grid_step(pos: Cell, action: int, rng: np.random.Generator, spec: GridSpec,
              failure_model=None) -> Tuple[Cell, float, float]:
    """One navigation step: the move succeeds with P_success, otherwise the failure model applies."""
    failure_model = failure_model if failure_model is not None else StandStill()
    if rng.random() < spec.p_success:
        dx, dy = MOVES[action]
        nxt = clamp((pos[0] + dx, pos[1] + dy))
    else:
        nxt = failure_model.target(pos, action, rng)
    return nxt, -1.0, spec.cell_cost(nxt)


def grid_support() -> np.ndarray:
    support = np.full((GRID_SIZE * GRID_SIZE, len(MOVES), len(NEIGHBOUR_OFFSETS)), -1, dtype=np.int64)
    for s in range(GRID_SIZE * GRID_SIZE):
        x, y = state_position(s)
        for k, (dx, dy) in enumerate(NEIGHBOUR_OFFSETS):
            if on_grid((x + dx, y + dy)):
                support[s, :, k] = state_index((x + dx, y + dy))
    return support


def grid_true_model(spec: GridSpec, p_success: Optional[float] = None) -> TabularModel:
    """Exact dynamics with stand-still failures."""
    p = spec.p_success if p_success is None else p_success
    support = grid_support()
    probs = np.zeros(support.shape)
    for s in range(support.shape[0]):
        pos = state_position(s)
        for a, (dx, dy) in enumerate(MOVES):
            target = state_index(clamp((pos[0] + dx, pos[1] + dy)))
            k = int(np.flatnonzero(support[s, a] == target)[0])
            probs[s, a, 0] += 1.0 - p
            probs[s, a, k] += p
    return TabularModel(support, probs)


def grid_rcmdp(spec: GridSpec) -> Rcmdp:
    goal = state_index(spec.goal)
    scale = float(GRID_SIZE - 1)
    return Rcmdp(
        n_states=GRID_SIZE * GRID_SIZE,
        n_actions=len(MOVES),
        reward=lambda s, a, s_next: -1.0,
        constraint_cost=lambda s, a, s_next: spec.cell_cost(state_position(s_next)),
        budget=spec.budget,
        discount=spec.discount,
        horizon=spec.horizon,
        is_terminal=lambda s: s == goal,
        initial_state=state_index(spec.start),
        policy_features=lambda s: np.array(state_position(s), dtype=np.float64) / scale,
    )


class GridEnv:
    def __init__(self, spec: GridSpec, failure_model=None):
        self.spec = spec
        self.failure_model = failure_model if failure_model is not None else StandStill()
        self.rcmdp = grid_rcmdp(spec)

    def step(self, state: int, action: int, rng: np.random.Generator) -> Tuple[int, float, float]:
        nxt, reward, cost = grid_step(state_position(state), action, rng, self.spec, self.failure_model)
        return state_index(nxt), reward, cost


# ---------------------------------------------------------------------------
# Domain helpers
# ---------------------------------------------------------------------------


def make_environment(domain: str, n_states: int = DEFAULT_INVENTORY_STATES,
                     tables_path: Optional[str] = None):
    """Data-collection environment (P_data) of a domain."""
    if domain == "inventory":
        return InventoryEnv(InventorySpec(n_states=n_states))
    if domain in ("nav1", "nav2"):
        tables = load_cell_tables(tables_path) if tables_path else None
        return GridEnv(grid_spec(domain, tables=tables))
    raise ValueError(f"unknown domain {domain!r}, expected one of {DOMAINS}")


def domain_support(domain: str, n_states: int = DEFAULT_INVENTORY_STATES) -> np.ndarray:
    if domain == "inventory":
        return inventory_support(n_states)
    if domain in ("nav1", "nav2"):
        return grid_support()
    raise ValueError(f"unknown domain {domain!r}")


def outcome_count(domain: str, n_states: int = DEFAULT_INVENTORY_STATES) -> int:
    """S' used in the Hoeffding bound: all states for inventory, |N(s)| = 5 on grids."""
    return n_states if domain == "inventory" else len(NEIGHBOUR_OFFSETS)


def collect_random_episodes(env, n_episodes: int, rng: np.random.Generator) -> List[Trajectory]:
    """Run the uniform random policy from s0 on the environment's true dynamics."""
    rcmdp = env.rcmdp
    episodes = []
    for _ in range(n_episodes):
        traj = Trajectory()
        state = rcmdp.initial_state
        for _ in range(rcmdp.horizon):
            if rcmdp.is_terminal(state):
                break
            action = int(rng.integers(rcmdp.n_actions))
            nxt, reward, cost = env.step(state, action, rng)
            traj.append(state, action, reward, cost, nxt)
            state = nxt
        episodes.append(traj)
    logger.info(f"Collected {n_episodes} random-policy episodes "
                f"({sum(len(t) for t in episodes)} transitions)")
    return episodes
