"""Constant-product pool with fee on the input leg.

Sign convention for fills: a positive ``u_x`` / ``u_y`` is received by the
agent from the pool, so the pool updates as ``x - u_x``, ``y - u_y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNISWAP_V2_GAMMA = 0.997


class InvalidStateError(ValueError):
    pass


class InfeasibleTradeError(ValueError):
    pass


class NoInversionError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class PoolState:
    x: float  # risky reserve
    y: float  # numeraire reserve

    def __post_init__(self):
        if not (self.x > 0 and self.y > 0):
            raise InvalidStateError(f"reserves must be positive, got x={self.x}, y={self.y}")

    @classmethod
    def from_value(cls, value: float, price: float, ratio: float = 1.0) -> PoolState:
        """Pool worth ``value`` at reference ``price`` with implied price ``ratio * price``."""
        x = value / (price * (1.0 + ratio))
        return cls(x, ratio * price * x)

    @property
    def k(self) -> float:
        return self.x * self.y


@dataclass(frozen=True, slots=True)
class FeeParams:
    gamma: float = UNISWAP_V2_GAMMA

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    @classmethod
    def from_bps(cls, fee_bps: float) -> FeeParams:
        return cls(1.0 - fee_bps * 1e-4)

    @property
    def fee(self) -> float:
        return 1.0 - self.gamma

    @property
    def log_halfwidth(self) -> float:
        """Half-width of the no-trade band in log price, ``-log(gamma)``."""
        return -math.log(self.gamma)


@dataclass(frozen=True, slots=True)
class Fill:
    u_x: float = 0.0
    u_y: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.u_x == 0.0 and self.u_y == 0.0

    def objective(self, price: float) -> float:
        """Value to the agent at ``price``: ``price * u_x + u_y``."""
        return price * self.u_x + self.u_y

    def notional(self) -> float:
        """Numeraire leg size."""
        return abs(self.u_y)


ZERO_FILL = Fill()


def pool_implied_price(state: PoolState) -> float:
    if state.x <= 0:
        raise InvalidStateError("zero risky reserve")
    return state.y / state.x


def no_trade_band(state: PoolState, fees: FeeParams) -> tuple[float, float]:
    p_hat = state.y / state.x
    return fees.gamma * p_hat, p_hat / fees.gamma


def optimal_trade(state: PoolState, p_tilde: float, fees: FeeParams) -> Fill:
    """Trade maximizing ``p_tilde * u_x + u_y`` over the fee-adjusted curve."""
    if p_tilde <= 0:
        raise ValueError("p_tilde must be > 0")
    x, y, g = state.x, state.y, fees.gamma
    # closed forms written as y(1 - sqrt(r)) etc. via expm1 to keep full
    # relative precision for trades that are tiny next to the reserves
    if p_tilde < g * y / x:
        # agent sells risky (u_x <= 0), receives numeraire; r = p~ x / (g y) < 1
        half_log_r = 0.5 * (math.log(p_tilde * x / y) - math.log(g))
        u_y = -y * math.expm1(half_log_r)
        u_x = -(x / g) * math.expm1(-half_log_r)
        return Fill(min(u_x, 0.0), max(u_y, 0.0))
    if p_tilde > y / (g * x):
        # agent buys risky (u_x >= 0), pays numeraire; r = g p~ x / y > 1
        half_log_r = 0.5 * (math.log(p_tilde * x / y) + math.log(g))
        u_y = -(y / g) * math.expm1(half_log_r)
        u_x = -x * math.expm1(-half_log_r)
        return Fill(max(u_x, 0.0), min(u_y, 0.0))
    return ZERO_FILL


def apply_trade(state: PoolState, fill: Fill, fees: FeeParams | None = None) -> PoolState:
    if fill.is_zero:
        return state
    x, y = state.x - fill.u_x, state.y - fill.u_y
    if not (x > 0 and y > 0):
        raise InfeasibleTradeError(f"fill {fill} exceeds reserves of {state}")
    return PoolState(x, y)


def curve_residual(state: PoolState, fill: Fill, fees: FeeParams) -> float:
    """Relative violation of the fee-adjusted constant-product condition."""
    x, y, g = state.x, state.y, fees.gamma
    if fill.u_x <= 0:
        lhs = (y - fill.u_y) * (x - g * fill.u_x)
    else:
        lhs = (y - g * fill.u_y) * (x - fill.u_x)
    return abs(lhs - x * y) / (x * y)


def pool_value(state: PoolState, p: float) -> float:
    return state.x * p + state.y


def impermanent_loss(initial: PoolState, current: PoolState, p: float) -> float:
    return (initial.x * p + initial.y) - (current.x * p + current.y)


def invert_trade(pre_state: PoolState, fill: Fill, fees: FeeParams) -> float:
    """Unique private price for which ``fill`` is the optimal trade.

    Any point on the fee-adjusted curve is optimal for exactly one price;
    the received leg pins it down.
    """
    x, y, g = pre_state.x, pre_state.y, fees.gamma
    if fill.u_x > 0:
        rem = x - fill.u_x
        if rem <= 0:
            raise InfeasibleTradeError("fill exceeds risky reserve")
        return x * y / (g * rem * rem)
    if fill.u_y > 0:
        rem = y - fill.u_y
        if rem <= 0:
            raise InfeasibleTradeError("fill exceeds numeraire reserve")
        return g * rem * rem / (x * y)
    raise NoInversionError("zero fill has no unique private price")


def trade_paying_numeraire(state: PoolState, amount: float, fees: FeeParams) -> Fill:
    """Agent pays ``amount`` numeraire and receives risky along the curve."""
    x, y, g = state.x, state.y, fees.gamma
    return Fill(x * g * amount / (y + g * amount), -amount)


def trade_receiving_numeraire(state: PoolState, amount: float, fees: FeeParams) -> Fill:
    """Agent receives ``amount`` numeraire and pays risky along the curve."""
    x, y, g = state.x, state.y, fees.gamma
    if amount >= y:
        raise InfeasibleTradeError("cannot withdraw the whole numeraire reserve")
    return Fill(-x * amount / (g * (y - amount)), amount)


def fee_paid(fill: Fill, fees: FeeParams, p: float) -> float:
    """Fee on the input leg, in numeraire at reference price ``p``."""
    if fill.u_y < 0:
        return fees.fee * -fill.u_y
    if fill.u_x < 0:
        return fees.fee * -fill.u_x * p
    return 0.0


def optimal_trade_arrays(x, y, p_tilde, gamma):
    """Vectorized ``optimal_trade``; returns ``(u_x, u_y)`` arrays."""
    x, y, p_tilde = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, p_tilde)))
    sell = p_tilde < gamma * y / x
    buy = p_tilde > y / (gamma * x)
    u_x = np.zeros_like(x)
    u_y = np.zeros_like(x)
    lg = math.log(gamma)
    xs, ys, ps = x[sell], y[sell], p_tilde[sell]
    h = 0.5 * (np.log(ps * xs / ys) - lg)
    u_y[sell] = np.maximum(-ys * np.expm1(h), 0.0)
    u_x[sell] = np.minimum(-(xs / gamma) * np.expm1(-h), 0.0)
    xb, yb, pb = x[buy], y[buy], p_tilde[buy]
    h = 0.5 * (np.log(pb * xb / yb) + lg)
    u_y[buy] = np.minimum(-(yb / gamma) * np.expm1(h), 0.0)
    u_x[buy] = np.maximum(-xb * np.expm1(-h), 0.0)
    return u_x, u_y
