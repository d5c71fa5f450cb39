"""Generation-cost curve and inclining-block real-time price."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class PriceParams:
    alpha1: float = 0.02
    alpha2: float = 0.02
    alpha3: float = 0.5
    sigma1: float = 1.1
    sigma2: float = 1.3
    delta1: float = 50.0  # kW
    delta2: float = 100.0  # kW

    def __post_init__(self):
        if not (self.sigma2 >= self.sigma1 >= 1.0):
            raise ConfigurationError("price tiers need sigma2 >= sigma1 >= 1")
        if not (self.delta2 >= self.delta1 >= 0.0):
            raise ConfigurationError("price thresholds need delta2 >= delta1 >= 0")
        if self.alpha1 < 0:
            raise ConfigurationError("alpha1 must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_PRICE = PriceParams()


def _check_load(load: float) -> float:
    load = float(load)
    if not math.isfinite(load) or load < 0:
        raise ContractViolation(f"load must be finite and >= 0, got {load!r}")
    return load


def generation_cost(load: float, p: PriceParams = DEFAULT_PRICE) -> float:
    """Quadratic generation cost ``a1*L**2 + a2*L + a3`` at total load ``L`` (kW)."""
    load = _check_load(load)
    return p.alpha1 * load * load + p.alpha2 * load + p.alpha3


def tier_multiplier(load: float, p: PriceParams = DEFAULT_PRICE) -> float:
    # boundaries belong to the lower tier
    if load <= p.delta1:
        return 1.0
    if load <= p.delta2:
        return p.sigma1
    return p.sigma2


def rtp(load: float, p: PriceParams = DEFAULT_PRICE) -> float:
    """Real-time price: generation cost scaled by the block multiplier for ``load``."""
    lam = generation_cost(load, p)
    return tier_multiplier(load, p) * lam
