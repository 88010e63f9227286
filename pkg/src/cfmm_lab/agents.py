"""Trader behaviour: arbitrageurs, NT1 (private value) and NT2 (coin flip + exponential size)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .pool import (
    ZERO_FILL,
    FeeParams,
    Fill,
    PoolState,
    optimal_trade,
    trade_paying_numeraire,
    trade_receiving_numeraire,
)

# NT2 notional is capped at this fraction of the numeraire reserve
NT2_SIZE_CAP = 0.25


class AgentKind(str, enum.Enum):
    ARB = "arb"
    NT1 = "nt1"
    NT2 = "nt2"


@dataclass(frozen=True, slots=True)
class ArbParams:
    edge_bps: float = 0.0

    def __post_init__(self):
        if not self.edge_bps >= 0:
            raise ValueError(f"edge_bps must be >= 0, got {self.edge_bps}")


@dataclass(frozen=True, slots=True)
class NT1Params:
    lambda_delta: float  # arrivals per day
    sigma_delta: float  # stddev of the private value offset

    def __post_init__(self):
        if not self.lambda_delta >= 0:
            raise ValueError(f"lambda_delta must be >= 0, got {self.lambda_delta}")
        if not self.sigma_delta >= 0:
            raise ValueError(f"sigma_delta must be >= 0, got {self.sigma_delta}")


@dataclass(frozen=True, slots=True)
class NT2Params:
    rate_nt: float  # arrivals per day
    size_scale: float  # mean notional, numeraire

    def __post_init__(self):
        if not self.rate_nt >= 0:
            raise ValueError(f"rate_nt must be >= 0, got {self.rate_nt}")
        if not self.size_scale > 0:
            raise ValueError(f"size_scale must be > 0, got {self.size_scale}")


@dataclass(frozen=True, slots=True)
class AgentEvent:
    time: float
    kind: AgentKind
    draw: tuple = ()


def arb_fill(state: PoolState, p: float, fees: FeeParams, arb: ArbParams = ArbParams()) -> Fill:
    """Optimal trade at the reference price, skipped unless profit beats the edge."""
    fill = optimal_trade(state, p, fees)
    if fill.is_zero:
        return fill
    profit = fill.objective(p)
    if profit > arb.edge_bps * 1e-4 * fill.notional():
        return fill
    return ZERO_FILL


def delta_log_sigma(sigma_delta: float) -> float:
    """Stddev of log(1 + delta) giving stddev ``sigma_delta`` and mean zero for delta."""
    return math.sqrt(math.log1p(sigma_delta * sigma_delta))


def tilde_from_normal(p: float, sigma_delta: float, z: float) -> float:
    s = delta_log_sigma(sigma_delta)
    return p * math.exp(s * z - 0.5 * s * s)


def nt1_tilde_price(p: float, sigma_delta: float, rng: np.random.Generator) -> float:
    """p * (1 + delta) with 1 + delta lognormal, E[delta] = 0, sd(delta) = sigma_delta."""
    if p <= 0:
        raise ValueError("p must be > 0")
    return tilde_from_normal(p, sigma_delta, float(rng.standard_normal()))


def nt1_fill(state: PoolState, p: float, params: NT1Params, fees: FeeParams,
             rng: np.random.Generator) -> Fill:
    return optimal_trade(state, nt1_tilde_price(p, params.sigma_delta, rng), fees)


def nt2_fill_from_draws(state: PoolState, size_scale: float, buy: bool, unit_size: float,
                        fees: FeeParams) -> Fill:
    """NT2 fill for a given direction and unit-exponential size draw."""
    notional = min(size_scale * unit_size, NT2_SIZE_CAP * state.y)
    if notional <= 0:
        return ZERO_FILL
    if buy:
        return trade_paying_numeraire(state, notional, fees)
    return trade_receiving_numeraire(state, notional, fees)


def nt2_fill(state: PoolState, params: NT2Params, fees: FeeParams, rng: np.random.Generator) -> Fill:
    """Fair-coin direction, exponential numeraire notional with mean ``size_scale``."""
    buy = bool(rng.random() < 0.5)
    return nt2_fill_from_draws(state, params.size_scale, buy, float(rng.standard_exponential()), fees)


def sample_arrivals(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrival times on ``[0, horizon]``.

    Built from unit-rate exponential gaps divided by ``rate``, so for a fixed
    stream the arrival count is nondecreasing in ``rate``.
    """
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    if rate == 0:
        return np.empty(0)
    target = rate * horizon
    chunk = max(16, int(target + 6 * math.sqrt(target) + 16))
    total = np.empty(0)
    last = 0.0
    while last <= target:
        gaps = rng.standard_exponential(chunk)
        c = last + np.cumsum(gaps)
        total = np.concatenate((total, c))
        last = c[-1]
    unit_times = total[total <= target]
    return unit_times / rate
