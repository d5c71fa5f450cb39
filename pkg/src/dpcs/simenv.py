"""Discrete-time simulation of households with schedulable appliances.

State is treated as a value: :func:`step` never mutates its input and
returns a fresh :class:`EnvState`.  Slots are 1-indexed, ``1 <= t <= T``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractViolation
from .pricing import DEFAULT_PRICE, PriceParams, generation_cost, rtp
from .rewards import DEFAULT_REWARD, RewardParams, terminal_reward


class Category(enum.IntEnum):
    NON_SHIFTABLE = 0
    NON_INTERRUPTIBLE = 1
    INTERRUPTIBLE = 2

    @classmethod
    def parse(cls, name) -> "Category":
        if isinstance(name, Category):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        for cat, aliases in _CATEGORY_ALIASES.items():
            if key in aliases:
                return cat
        raise ConfigurationError(f"unknown appliance category {name!r}")

    @property
    def label(self) -> str:
        return _CATEGORY_LABELS[self]


_CATEGORY_ALIASES = {
    Category.NON_SHIFTABLE: {"nonshiftable", "ns", "nsa", "mustrun"},
    Category.NON_INTERRUPTIBLE: {"noninterruptible", "ni", "nia"},
    Category.INTERRUPTIBLE: {"interruptible", "ia"},
}
_CATEGORY_LABELS = {
    Category.NON_SHIFTABLE: "non-shiftable",
    Category.NON_INTERRUPTIBLE: "non-interruptible",
    Category.INTERRUPTIBLE: "interruptible",
}


@dataclass(frozen=True)
class ApplianceSpec:
    id: str
    category: Category
    max_rate_kw: float
    # (wake_slot, energy_kwh); for non-shiftable appliances each event is
    # the energy that must be served within that slot
    demand_events: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "category", Category.parse(self.category))
        object.__setattr__(self, "demand_events", tuple((int(s), float(e)) for s, e in self.demand_events))
        if not (self.max_rate_kw > 0 and math.isfinite(self.max_rate_kw)):
            raise ConfigurationError(f"appliance {self.id!r}: max_rate_kw must be > 0")
        for slot, energy in self.demand_events:
            if energy < 0 or not math.isfinite(energy):
                raise ConfigurationError(f"appliance {self.id!r}: negative or non-finite energy {energy}")

    @property
    def shiftable(self) -> bool:
        return self.category != Category.NON_SHIFTABLE


@dataclass(frozen=True)
class Household:
    id: str
    appliances: tuple

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))

    @property
    def p_max(self) -> float:
        """Action ceiling: sum of shiftable appliance rates."""
        return float(sum(a.max_rate_kw for a in self.appliances if a.shiftable))

    @property
    def obs_dim(self) -> int:
        return 3 + 2 * len(self.appliances)


@dataclass(frozen=True)
class Scenario:
    households: tuple
    T: int = 144
    slot_minutes: float = 15.0

    def __post_init__(self):
        object.__setattr__(self, "households", tuple(self.households))
        self.validate()

    def validate(self) -> None:
        if int(self.T) != self.T or self.T < 1:
            raise ConfigurationError(f"T must be an integer >= 1, got {self.T!r}")
        if not self.households:
            raise ConfigurationError("scenario has no households")
        if not self.slot_minutes > 0:
            raise ConfigurationError("slot_minutes must be positive")
        ids = [h.id for h in self.households]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate household ids")
        for h in self.households:
            if not h.appliances:
                raise ConfigurationError(f"household {h.id!r} has no appliances")
            for a in h.appliances:
                for slot, _ in a.demand_events:
                    if not 1 <= slot <= self.T:
                        raise ConfigurationError(
                            f"household {h.id!r} appliance {a.id!r}: wake slot {slot} outside [1, {self.T}]")

    @property
    def N(self) -> int:
        return len(self.households)

    @property
    def dt(self) -> float:
        """Slot length in hours."""
        return self.slot_minutes / 60.0

    @cached_property
    def _compiled(self):
        return tuple(_CompiledHousehold.build(h, self.T) for h in self.households)

    def obs_dims(self) -> list[int]:
        return [h.obs_dim for h in self.households]

    def p_max(self) -> np.ndarray:
        return np.array([h.p_max for h in self.households])


@dataclass(frozen=True)
class _CompiledHousehold:
    category: np.ndarray  # int8 (A,)
    max_rate: np.ndarray  # (A,)
    demand: np.ndarray  # (T + 2, A), row t = energy waking at slot t
    ns_mask: np.ndarray  # bool (A,)

    @classmethod
    def build(cls, h: Household, T: int) -> "_CompiledHousehold":
        A = len(h.appliances)
        demand = np.zeros((T + 2, A))
        for j, a in enumerate(h.appliances):
            for slot, energy in a.demand_events:
                demand[slot, j] += energy
        cat = np.array([int(a.category) for a in h.appliances], dtype=np.int8)
        rate = np.array([a.max_rate_kw for a in h.appliances], dtype=np.float64)
        for arr in (cat, rate, demand):
            arr.setflags(write=False)
        return cls(cat, rate, demand, cat == Category.NON_SHIFTABLE)


@dataclass
class HouseholdState:
    remaining: np.ndarray  # kWh per appliance at the start of the current slot
    prev_remaining: np.ndarray  # same, one slot earlier
    started: np.ndarray  # uint8, running non-interruptible appliances

    def copy(self) -> "HouseholdState":
        return HouseholdState(self.remaining.copy(), self.prev_remaining.copy(), self.started.copy())

    @property
    def awake(self) -> np.ndarray:
        return self.remaining > 0


@dataclass
class EnvState:
    scenario: Scenario
    t: int
    households: tuple
    prev_price: float
    price: float
    loads: tuple = ()
    price_params: PriceParams = DEFAULT_PRICE
    reward_params: RewardParams = DEFAULT_REWARD

    @property
    def done(self) -> bool:
        return self.t > self.scenario.T

    def unfulfilled_kwh(self, i: int) -> float:
        """Pending shiftable energy of household ``i``."""
        comp = self.scenario._compiled[i]
        return float(self.households[i].remaining[~comp.ns_mask].sum())


@dataclass
class StepResult:
    state: EnvState
    load: float
    price: float
    rewards: np.ndarray
    terminal: bool
    shiftable_kw: np.ndarray  # realized (billed) shiftable draw per household
    nonshiftable_kw: np.ndarray
    allocations: list = field(default_factory=list)


def _wake(hs: HouseholdState, comp: _CompiledHousehold, t: int) -> None:
    row = comp.demand[t]
    hs.remaining[comp.ns_mask] = row[comp.ns_mask]
    hs.remaining[~comp.ns_mask] += row[~comp.ns_mask]


def reset(scenario: Scenario, price_params: PriceParams = DEFAULT_PRICE,
          reward_params: RewardParams = DEFAULT_REWARD) -> EnvState:
    if not isinstance(scenario, Scenario):
        raise ConfigurationError("reset expects a Scenario")
    scenario.validate()
    states = []
    for comp in scenario._compiled:
        A = comp.category.shape[0]
        hs = HouseholdState(np.zeros(A), np.zeros(A), np.zeros(A, dtype=np.uint8))
        _wake(hs, comp, 1)
        hs.prev_remaining[:] = hs.remaining
        states.append(hs)
    p0 = generation_cost(0.0, price_params)
    return EnvState(scenario, 1, tuple(states), p0, p0, (), price_params, reward_params)


def observe(env: EnvState, i: int) -> np.ndarray:
    """Observation vector of household ``i`` (0-based).

    Layout: ``[t/T, previous price, current price, remaining kWh per appliance
    one slot earlier, remaining kWh per appliance now]``.  Built only from
    household ``i``'s own state and the broadcast prices.
    """
    if not 0 <= i < len(env.households):
        raise IndexError(f"household index {i} out of range")
    hs = env.households[i]
    A = hs.remaining.shape[0]
    obs = np.empty(3 + 2 * A)
    obs[0] = env.t / env.scenario.T
    obs[1] = env.prev_price
    obs[2] = env.price
    obs[3:3 + A] = hs.prev_remaining
    obs[3 + A:] = hs.remaining
    return obs


def observe_all(env: EnvState) -> list[np.ndarray]:
    return [observe(env, i) for i in range(len(env.households))]


def allocate_power(hs: HouseholdState, comp: _CompiledHousehold, power: float, dt: float) -> np.ndarray:
    """Serve shiftable appliances from ``power`` kW in place; returns per-appliance kW."""
    if power < 0 or not math.isfinite(power):
        raise ContractViolation(f"power must be finite and >= 0, got {power!r}")
    out = np.zeros(comp.category.shape[0])
    kernels.allocate(comp.category, comp.max_rate, hs.remaining, hs.started, float(power), dt, out)
    return out


def step(env: EnvState, actions: Sequence[float]) -> StepResult:
    sc = env.scenario
    if env.done:
        raise ContractViolation("episode already finished; call reset()")
    actions = np.asarray(actions, dtype=np.float64).reshape(-1)
    if actions.shape[0] != sc.N:
        raise ContractViolation(f"expected {sc.N} actions, got {actions.shape[0]}")
    if not np.all(np.isfinite(actions)) or np.any(actions < 0):
        raise ContractViolation(f"actions must be finite and >= 0, got {actions.tolist()}")

    dt = sc.dt
    t = env.t
    terminal = t == sc.T
    new_states = []
    shift_kw = np.zeros(sc.N)
    ns_kw = np.zeros(sc.N)
    allocations = []
    for i, (hs, comp) in enumerate(zip(env.households, sc._compiled)):
        nxt = hs.copy()
        start_of_slot = hs.remaining.copy()
        ns_kw[i] = float(nxt.remaining[comp.ns_mask].sum()) / dt
        nxt.remaining[comp.ns_mask] = 0.0
        alloc = allocate_power(nxt, comp, actions[i], dt)
        shift_kw[i] = float(alloc.sum())
        allocations.append(alloc)
        nxt.prev_remaining = start_of_slot
        new_states.append(nxt)

    load = float(shift_kw.sum() + ns_kw.sum())
    price = rtp(load, env.price_params)
    rewards = np.empty(sc.N)
    for i, nxt in enumerate(new_states):
        comp = sc._compiled[i]
        unfulfilled = float(nxt.remaining[~comp.ns_mask].sum())
        r2 = terminal_reward(t, sc.T, unfulfilled, env.reward_params)
        r1 = price * shift_kw[i]
        rewards[i] = r2 - r1
        if not terminal:
            _wake(nxt, comp, t + 1)

    nxt_env = EnvState(sc, t + 1, tuple(new_states), env.price, price, env.loads + (load,),
                       env.price_params, env.reward_params)
    return StepResult(nxt_env, load, price, rewards, terminal, shift_kw, ns_kw, allocations)


def greedy_actions(scenario: Scenario) -> np.ndarray:
    """Immediate-service policy: request every shiftable appliance's full rate."""
    return scenario.p_max()
