"""Per-slot rewards, discounted returns and load-profile metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class RewardParams:
    eps1_coeff: float = -60.0  # reward per unfulfilled kWh at the horizon
    eps2: float = 50.0  # bonus when every shiftable demand is met
    gamma: float = 0.99

    def __post_init__(self):
        if self.eps2 <= 0:
            raise ConfigurationError("eps2 must be positive")
        if self.eps1_coeff >= 0:
            raise ConfigurationError("eps1_coeff must be negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_REWARD = RewardParams()


@dataclass(frozen=True)
class LoadStats:
    peak_kw: float
    mean_kw: float
    variance: float
    par: float
    total_cost: float

    # column names follow the load-profile comparison table
    COLUMNS = ("peak (kW)", "mean (kW)", "Var", "PAR", "Cost")

    def as_row(self) -> dict:
        return dict(zip(self.COLUMNS, (self.peak_kw, self.mean_kw, self.variance, self.par, self.total_cost)))

    def to_dict(self) -> dict:
        return asdict(self)


def cost_reward(price: float, power: float) -> float:
    if price < 0 or power < 0:
        raise ContractViolation(f"price and power must be >= 0, got {price!r}, {power!r}")
    return price * power


def terminal_reward(t: int, horizon: int, unfulfilled_kwh: float, rp: RewardParams = DEFAULT_REWARD) -> float:
    """Horizon reward: zero before the last slot, bonus or penalty on it."""
    if t != horizon:
        return 0.0
    if unfulfilled_kwh > 0:
        return rp.eps1_coeff * unfulfilled_kwh
    return rp.eps2


def slot_reward(terminal_part: float, cost_part: float) -> float:
    return terminal_part - cost_part


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0 or not np.all(np.isfinite(r)):
        raise ContractViolation("rewards must be a non-empty finite series")
    total = 0.0
    for value in r[::-1]:
        total = float(value) + gamma * total
    return total


def _series(load_series) -> np.ndarray:
    load = np.asarray(load_series, dtype=np.float64)
    if load.ndim != 1 or load.size == 0:
        raise ContractViolation("load series must be a non-empty 1-D sequence")
    if np.any(load < 0) or not np.all(np.isfinite(load)):
        raise ContractViolation("load series must be finite and >= 0")
    return load


def par(load_series) -> float:
    """Natural log of peak over mean load."""
    load = _series(load_series)
    mean = float(load.mean())
    if mean <= 0:
        raise ContractViolation("PAR undefined for a zero-mean load series")
    return math.log(float(load.max()) / mean)


def total_cost(prices, consumption) -> float:
    """Sum over slots and households of price times draw.

    ``consumption`` has shape ``(T, N)``: one row per slot.
    """
    prices = np.asarray(prices, dtype=np.float64)
    cons = np.asarray(consumption, dtype=np.float64)
    if cons.ndim == 1:
        cons = cons[:, None]
    if prices.ndim != 1 or cons.ndim != 2 or cons.shape[0] != prices.shape[0]:
        raise ContractViolation(f"shape mismatch: prices {prices.shape} vs consumption {cons.shape}")
    return float(np.sum(prices[:, None] * cons))


def load_stats(load_series, prices, per_household) -> LoadStats:
    load = _series(load_series)
    return LoadStats(
        peak_kw=float(load.max()),
        mean_kw=float(load.mean()),
        variance=float(load.var()),
        par=par(load),
        total_cost=total_cost(prices, per_household),
    )
