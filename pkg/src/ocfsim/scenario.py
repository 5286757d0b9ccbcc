"""Scenario model: heterogeneous fleet, timed tasks, depots, and generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np


class AgentKind(str, Enum):
    HEAVY = "heavy"
    FAST = "fast"


class TaskKind(str, Enum):
    PICKUP = "P"
    DELIVERY = "D"


# Vehicle type parameters. Raw values are the published datasheet numbers;
# speed is normalized x10 and energy rate to cost-units per meter so that
# travel times and the economic-loss scale are mutually consistent.
TYPE_PARAMS = {
    AgentKind.HEAVY: {
        "speed_raw_mps": 10.0,
        "speed_mps": 100.0,
        "capacity_kg": 30,
        "max_range_m": 60_000.0,
        "energy_rate_raw_per_km": 20.0,
        "energy_rate_per_m": 0.020,
        "intrinsic_value": 2000.0,
    },
    AgentKind.FAST: {
        "speed_raw_mps": 20.0,
        "speed_mps": 200.0,
        "capacity_kg": 10,
        "max_range_m": 30_000.0,
        "energy_rate_raw_per_km": 10.0,
        "energy_rate_per_m": 0.010,
        "intrinsic_value": 500.0,
    },
}

DEFAULT_WEIGHTS = (100.0, 10.0, 1.0)
DEFAULT_HORIZON_S = 3600.0
DEFAULT_AREA_SIDE_M = 10_000.0


class ScenarioError(ValueError):
    """Raised on malformed or inconsistent scenario data."""


@dataclass(frozen=True)
class Agent:
    id: str
    kind: AgentKind
    position: tuple[float, float]
    speed_mps: float
    capacity_kg: int
    max_range_m: float
    energy_rate_per_m: float
    intrinsic_value: float
    home_depot: str


@dataclass(frozen=True)
class Task:
    id: str
    kind: TaskKind
    position: tuple[float, float]
    demand_kg: int
    window_s: tuple[float, float]
    release_s: float

    @property
    def window_start(self) -> float:
        return self.window_s[0]

    @property
    def window_end(self) -> float:
        return self.window_s[1]


@dataclass(frozen=True)
class Depot:
    id: str
    position: tuple[float, float]


@dataclass(frozen=True)
class Scenario:
    agents: tuple[Agent, ...]
    tasks: tuple[Task, ...]
    depots: tuple[Depot, ...]
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    horizon_s: float = DEFAULT_HORIZON_S
    area_side_m: float = DEFAULT_AREA_SIDE_M
    seed: int = 0

    _agent_index: dict = field(default_factory=dict, repr=False, compare=False)
    _task_index: dict = field(default_factory=dict, repr=False, compare=False)
    _depot_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_agent_index", {a.id: a for a in self.agents})
        object.__setattr__(self, "_task_index", {t.id: t for t in self.tasks})
        object.__setattr__(self, "_depot_index", {d.id: d for d in self.depots})
        _validate(self)

    def agent(self, agent_id: str) -> Agent:
        try:
            return self._agent_index[agent_id]
        except KeyError:
            raise ScenarioError(f"unknown agent {agent_id!r}") from None

    def task(self, task_id: str) -> Task:
        try:
            return self._task_index[task_id]
        except KeyError:
            raise ScenarioError(f"unknown node ref {task_id!r}") from None

    def depot(self, depot_id: str) -> Depot:
        try:
            return self._depot_index[depot_id]
        except KeyError:
            raise ScenarioError(f"unknown node ref {depot_id!r}") from None

    def is_task(self, node_id: str) -> bool:
        return node_id in self._task_index

    def is_depot(self, node_id: str) -> bool:
        return node_id in self._depot_index

    def node_position(self, node_id: str) -> tuple[float, float]:
        if node_id in self._task_index:
            return self._task_index[node_id].position
        if node_id in self._depot_index:
            return self._depot_index[node_id].position
        raise ScenarioError(f"unknown node ref {node_id!r}")

    @property
    def fleet_max_speed(self) -> float:
        return max(a.speed_mps for a in self.agents)

    @property
    def fleet_max_capacity(self) -> int:
        return max(a.capacity_kg for a in self.agents)

    @property
    def fleet_max_range(self) -> float:
        return max(a.max_range_m for a in self.agents)

    @property
    def fleet_capacity_sum(self) -> int:
        return sum(a.capacity_kg for a in self.agents)


def _validate(sc: Scenario) -> None:
    if not sc.agents:
        raise ScenarioError("scenario needs at least one agent")
    if not sc.tasks:
        raise ScenarioError("scenario needs at least one task")
    if not sc.depots:
        raise ScenarioError("scenario needs at least one depot")
    ids = [a.id for a in sc.agents] + [t.id for t in sc.tasks] + [d.id for d in sc.depots]
    if len(set(ids)) != len(ids):
        raise ScenarioError("agent/task/depot ids must be globally unique")
    if len(sc.weights) != 3 or any(w < 0 for w in sc.weights):
        raise ScenarioError("weights must be three nonnegative numbers")
    if sc.horizon_s <= 0:
        raise ScenarioError("horizon_s must be positive")
    for a in sc.agents:
        if a.home_depot not in sc._depot_index:
            raise ScenarioError(f"agent {a.id}: unknown home depot {a.home_depot!r}")
        if a.speed_mps <= 0 or a.capacity_kg <= 0 or a.max_range_m <= 0:
            raise ScenarioError(f"agent {a.id}: speed, capacity and range must be positive")
        if a.energy_rate_per_m < 0 or a.intrinsic_value < 0:
            raise ScenarioError(f"agent {a.id}: energy rate and intrinsic value must be >= 0")
    for t in sc.tasks:
        lo, hi = t.window_s
        if t.demand_kg < 1:
            raise ScenarioError(f"task {t.id}: demand must be >= 1 kg")
        if not isinstance(t.demand_kg, int):
            raise ScenarioError(f"task {t.id}: demand must be an integer kg amount")
        if lo > hi:
            raise ScenarioError(f"task {t.id}: window start exceeds window end")
        if t.release_s > lo:
            raise ScenarioError(f"task {t.id}: release time exceeds window start")
        if t.release_s < 0 or lo < 0 or hi > sc.horizon_s:
            raise ScenarioError(f"task {t.id}: window must lie within [0, horizon]")


def available_tasks(scenario: Scenario, t_now: float) -> list[Task]:
    """Tasks released by t_now, in declaration order."""
    return [t for t in scenario.tasks if t.release_s <= t_now]


def release_epochs(scenario: Scenario) -> list[float]:
    """Distinct release times, ascending. Always includes 0.0."""
    return sorted({0.0} | {t.release_s for t in scenario.tasks})


# --- JSON round-trip -------------------------------------------------------

_TOP_KEYS = {"agents", "tasks", "depots", "weights", "horizon_s", "area_side_m", "seed"}
_AGENT_KEYS = {"id", "kind", "position", "speed_mps", "capacity_kg", "max_range_m",
               "energy_rate_per_m", "intrinsic_value", "home_depot"}
_TASK_KEYS = {"id", "kind", "position", "demand_kg", "window_s", "release_s"}
_DEPOT_KEYS = {"id", "position"}


def _check_keys(obj: dict, allowed: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"{what}: unknown keys {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise ScenarioError(f"{what}: missing keys {sorted(missing)}")


def _pair(v, what: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioError(f"{what}: expected a [x, y] pair")
    return (float(v[0]), float(v[1]))


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    _check_keys(data, _TOP_KEYS, "scenario")
    agents = []
    for obj in data["agents"]:
        _check_keys(obj, _AGENT_KEYS, f"agent {obj.get('id', '?')}")
        try:
            kind = AgentKind(obj["kind"])
        except ValueError:
            raise ScenarioError(f"agent {obj['id']}: unknown kind {obj['kind']!r}") from None
        agents.append(Agent(
            id=str(obj["id"]),
            kind=kind,
            position=_pair(obj["position"], f"agent {obj['id']} position"),
            speed_mps=float(obj["speed_mps"]),
            capacity_kg=int(obj["capacity_kg"]),
            max_range_m=float(obj["max_range_m"]),
            energy_rate_per_m=float(obj["energy_rate_per_m"]),
            intrinsic_value=float(obj["intrinsic_value"]),
            home_depot=str(obj["home_depot"]),
        ))
    tasks = []
    for obj in data["tasks"]:
        _check_keys(obj, _TASK_KEYS, f"task {obj.get('id', '?')}")
        try:
            kind = TaskKind(obj["kind"])
        except ValueError:
            raise ScenarioError(f"task {obj['id']}: unknown kind {obj['kind']!r}") from None
        demand = obj["demand_kg"]
        if isinstance(demand, float) and not demand.is_integer():
            raise ScenarioError(f"task {obj['id']}: demand must be an integer kg amount")
        tasks.append(Task(
            id=str(obj["id"]),
            kind=kind,
            position=_pair(obj["position"], f"task {obj['id']} position"),
            demand_kg=int(demand),
            window_s=_pair(obj["window_s"], f"task {obj['id']} window_s"),
            release_s=float(obj["release_s"]),
        ))
    depots = []
    for obj in data["depots"]:
        _check_keys(obj, _DEPOT_KEYS, f"depot {obj.get('id', '?')}")
        depots.append(Depot(id=str(obj["id"]),
                            position=_pair(obj["position"], f"depot {obj['id']} position")))
    weights = data["weights"]
    if not isinstance(weights, (list, tuple)) or len(weights) != 3:
        raise ScenarioError("weights must be a list of three numbers")
    return Scenario(
        agents=tuple(agents),
        tasks=tuple(tasks),
        depots=tuple(depots),
        weights=tuple(float(w) for w in weights),
        horizon_s=float(data["horizon_s"]),
        area_side_m=float(data["area_side_m"]),
        seed=int(data["seed"]),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "agents": [{
            "id": a.id,
            "kind": a.kind.value,
            "position": list(a.position),
            "speed_mps": a.speed_mps,
            "capacity_kg": a.capacity_kg,
            "max_range_m": a.max_range_m,
            "energy_rate_per_m": a.energy_rate_per_m,
            "intrinsic_value": a.intrinsic_value,
            "home_depot": a.home_depot,
        } for a in sc.agents],
        "tasks": [{
            "id": t.id,
            "kind": t.kind.value,
            "position": list(t.position),
            "demand_kg": t.demand_kg,
            "window_s": list(t.window_s),
            "release_s": t.release_s,
        } for t in sc.tasks],
        "depots": [{"id": d.id, "position": list(d.position)} for d in sc.depots],
        "weights": list(sc.weights),
        "horizon_s": sc.horizon_s,
        "area_side_m": sc.area_side_m,
        "seed": sc.seed,
    }


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path: str) -> None:
    """Write canonical JSON (stable field order, trailing newline)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2)
        fh.write("\n")


def small_scale_fixture() -> Scenario:
    """The shipped 4-agent / 10-task scenario with staged releases at 0/25/90 s."""
    text = resources.files("ocfsim.data").joinpath("smallscale.json").read_text()
    return scenario_from_dict(json.loads(text))


# --- random generation -----------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    n_agents: int = 4
    n_tasks: int = 10
    n_depots: int = 2
    area_side_m: float = DEFAULT_AREA_SIDE_M
    demand_range: tuple[int, int] = (5, 40)
    window_style: str = "standard"  # "standard" | "wide" | "tight"
    arrival_fraction: float = 0.4
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    horizon_s: float = DEFAULT_HORIZON_S


_WINDOW_WIDTHS = {
    "standard": (60.0, 240.0),
    "wide": (400.0, 1200.0),
    "tight": (40.0, 90.0),
}


def generate_scenario(config: GeneratorConfig, seed: int) -> Scenario:
    """Random scenario; every task is insertable for at least one agent at release."""
    lo, hi = config.demand_range
    if lo < 1:
        raise ScenarioError("demand_range low bound must be >= 1 kg")
    if config.window_style not in _WINDOW_WIDTHS:
        raise ScenarioError(f"unknown window_style {config.window_style!r}")
    rng = np.random.default_rng([int(seed), 0x5C3])
    half = config.area_side_m / 2.0

    depots = tuple(
        Depot(id=f"D_{k}", position=(float(rng.uniform(-half, half)),
                                     float(rng.uniform(-half, half))))
        for k in range(config.n_depots)
    )

    agents = []
    for i in range(config.n_agents):
        kind = AgentKind.HEAVY if i % 2 == 0 else AgentKind.FAST
        p = TYPE_PARAMS[kind]
        pos = (float(rng.uniform(-half, half)), float(rng.uniform(-half, half)))
        home = min(depots, key=lambda d: math.hypot(pos[0] - d.position[0],
                                                    pos[1] - d.position[1]))
        agents.append(Agent(
            id=f"A_{i}", kind=kind, position=pos,
            speed_mps=p["speed_mps"], capacity_kg=p["capacity_kg"],
            max_range_m=p["max_range_m"], energy_rate_per_m=p["energy_rate_per_m"],
            intrinsic_value=p["intrinsic_value"], home_depot=home.id,
        ))
    agents = tuple(agents)

    cap_sum = sum(a.capacity_kg for a in agents)
    if hi > cap_sum:
        raise ScenarioError(
            f"demand_range upper bound {hi} exceeds fleet capacity sum {cap_sum}")

    n_dynamic = int(round(config.arrival_fraction * config.n_tasks))
    w_lo, w_hi = _WINDOW_WIDTHS[config.window_style]

    tasks: list[Task] = []
    for j in range(config.n_tasks):
        task = None
        for _ in range(200):
            pos = (float(rng.uniform(-half, half)), float(rng.uniform(-half, half)))
            demand = int(rng.integers(lo, hi + 1))
            kind = TaskKind.PICKUP if rng.random() < 0.5 else TaskKind.DELIVERY
            release = float(np.round(rng.uniform(10.0, 300.0), 1)) if j < n_dynamic else 0.0
            start = release + float(np.round(rng.uniform(0.0, 40.0), 1))
            end = min(start + float(np.round(rng.uniform(w_lo, w_hi), 1)), config.horizon_s)
            cand = Task(id=f"T_{j}", kind=kind, position=pos, demand_kg=demand,
                        window_s=(start, end), release_s=release)
            if _insertable_by_someone(cand, agents, depots):
                task = cand
                break
        if task is None:
            raise ScenarioError(f"could not place a feasible task after 200 draws (T_{j})")
        tasks.append(task)

    return Scenario(
        agents=agents, tasks=tuple(tasks), depots=depots,
        weights=config.weights, horizon_s=config.horizon_s,
        area_side_m=config.area_side_m, seed=int(seed),
    )


def _insertable_by_someone(task: Task, agents: tuple[Agent, ...],
                           depots: tuple[Depot, ...]) -> bool:
    # Cold-start reachability: home -> task -> home within window and range.
    for a in agents:
        home = next(d for d in depots if d.id == a.home_depot)
        d0 = math.hypot(a.position[0] - home.position[0], a.position[1] - home.position[1])
        d1 = math.hypot(task.position[0] - home.position[0], task.position[1] - home.position[1])
        arrival = max(task.window_start, (d0 + d1) / a.speed_mps)
        if arrival <= task.window_end and d0 + 2.0 * d1 <= a.max_range_m:
            return True
    return False
