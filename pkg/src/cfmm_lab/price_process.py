"""Reference price dynamics: GBM and Merton jump-diffusion.

All times are in days. A 15 second block is ``15 / 86400`` days.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SECONDS_PER_DAY = 86_400.0
BLOCK_INTERVAL = 15.0 / SECONDS_PER_DAY


@dataclass(frozen=True, slots=True)
class DiffusionParams:
    mu_D: float = 0.0  # drift per day
    sigma_D: float = 0.0  # volatility per sqrt(day)

    def __post_init__(self):
        if not self.sigma_D >= 0:
            raise ValueError(f"sigma_D must be >= 0, got {self.sigma_D}")


@dataclass(frozen=True, slots=True)
class JumpParams:
    lambda_J: float = 0.0  # expected jumps per day
    mu_J: float = 0.0  # mean log jump size
    sigma_J: float = 0.0  # stddev of log jump size

    def __post_init__(self):
        if not self.lambda_J >= 0:
            raise ValueError(f"lambda_J must be >= 0, got {self.lambda_J}")
        if not self.sigma_J >= 0:
            raise ValueError(f"sigma_J must be >= 0, got {self.sigma_J}")


@dataclass(frozen=True, slots=True)
class MJDParams:
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    jumps: JumpParams = field(default_factory=JumpParams)

    @classmethod
    def from_values(cls, sigma_D, lambda_J=0.0, sigma_J=0.0, mu_D=0.0, mu_J=0.0,
                    risk_neutral=False) -> MJDParams:
        """Flat constructor. ``risk_neutral=True`` pins both drifts to zero."""
        if risk_neutral:
            mu_D = mu_J = 0.0
        return cls(DiffusionParams(mu_D, sigma_D), JumpParams(lambda_J, mu_J, sigma_J))

    def risk_neutral(self) -> MJDParams:
        return replace(
            self,
            diffusion=replace(self.diffusion, mu_D=0.0),
            jumps=replace(self.jumps, mu_J=0.0),
        )

    @property
    def sigma_D(self) -> float:
        return self.diffusion.sigma_D

    @property
    def lambda_J(self) -> float:
        return self.jumps.lambda_J

    @property
    def sigma_J(self) -> float:
        return self.jumps.sigma_J


@dataclass(frozen=True)
class PricePath:
    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise ValueError("times and prices must be 1-D arrays of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(p > 0):
            raise ValueError("prices must be strictly positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", p)

    def __len__(self):
        return self.times.size

    def log_interp(self, t):
        """Reference price at ``t`` by linear interpolation of log price.

        Returns NaN outside ``[times[0], times[-1]]``.
        """
        t = np.asarray(t, dtype=float)
        out = np.exp(np.interp(t, self.times, np.log(self.prices)))
        outside = (t < self.times[0]) | (t > self.times[-1])
        return np.where(outside, np.nan, out)


def jump_compensator(jumps: JumpParams) -> float:
    """k = E[y - 1] for log y ~ N(mu_J, sigma_J^2)."""
    return math.expm1(jumps.mu_J + 0.5 * jumps.sigma_J**2)


def _drift(params: MJDParams) -> float:
    d, j = params.diffusion, params.jumps
    return d.mu_D - 0.5 * d.sigma_D**2 - j.lambda_J * jump_compensator(j)


def sample_log_return(params: MJDParams, dt, rng: np.random.Generator, size=None):
    """Draw log(p_{t+dt} / p_t).

    Uses the conditional-Gaussian form: given N jumps the return is normal
    with variance ``sigma_D^2 dt + N sigma_J^2``. When ``lambda_J == 0`` no
    Poisson draw is consumed, so the stream matches a pure GBM stepper.
    ``dt`` may be an array, in which case one draw per element is returned.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise ValueError("dt must be > 0")
    shape = dt.shape if size is None else size
    d, j = params.diffusion, params.jumps
    if j.lambda_J > 0:
        n = rng.poisson(j.lambda_J * dt, size=shape)
    else:
        n = np.zeros(shape)
    z = rng.standard_normal(shape)
    r = _drift(params) * dt + n * j.mu_J + np.sqrt(d.sigma_D**2 * dt + n * j.sigma_J**2) * z
    if np.ndim(r) == 0:
        return float(r)
    return r


def step_price(p, params: MJDParams, dt, rng: np.random.Generator):
    """Advance price(s) ``p`` by ``dt`` days."""
    if np.any(np.asarray(p) <= 0):
        raise ValueError("price must be > 0")
    size = np.shape(p) if np.ndim(p) else None
    r = sample_log_return(params, dt, rng, size=size if size else None)
    return p * np.exp(r)


def log_return_variance(params: MJDParams, dt: float) -> float:
    """Var of the log return over ``dt``: (sigma_D^2 + lambda (mu_J^2 + sigma_J^2)) dt."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    d, j = params.diffusion, params.jumps
    return (d.sigma_D**2 + j.lambda_J * (j.mu_J**2 + j.sigma_J**2)) * dt


def expected_gross_return(params: MJDParams, dt: float) -> float:
    return math.exp(params.diffusion.mu_D * dt)


class AnchoredPath:
    """Exact MJD sampler anchored on a fixed grid, with bridge queries in between.

    The path is generated interval by interval on ``grid`` (e.g. block ticks):
    each interval draws its Brownian increment, jump count, jump times and jump
    sizes from ``grid_rng``. Prices at arbitrary times inside an interval are
    then filled in with a Brownian bridge driven by ``bridge_rng``. Grid prices
    depend only on ``grid_rng``, so two runs that query different interior times
    still share the same grid path (common random numbers for event sets that
    differ between runs).

    Queries must be made in non-decreasing time order.
    """

    def __init__(self, p0: float, params: MJDParams, horizon: float, grid: np.ndarray,
                 grid_rng: np.random.Generator, bridge_rng: np.random.Generator):
        if p0 <= 0:
            raise ValueError("p0 must be > 0")
        self.params = params
        knots = np.concatenate(([0.0], np.asarray(grid, dtype=float)))
        if knots[-1] < horizon:
            knots = np.append(knots, horizon)
        self._knots = knots
        self._bridge_rng = bridge_rng
        self._drift = _drift(params)
        self._sigma2 = params.diffusion.sigma_D**2
        d, j = params.diffusion, params.jumps
        h = np.diff(knots)
        m = h.size
        self._w_end = d.sigma_D * np.sqrt(h) * grid_rng.standard_normal(m)
        if j.lambda_J > 0:
            counts = grid_rng.poisson(j.lambda_J * h)
        else:
            counts = np.zeros(m, dtype=int)
        total = int(counts.sum())
        offsets = grid_rng.random(total)
        sizes = j.mu_J + j.sigma_J * grid_rng.standard_normal(total)
        # group jumps per interval, sorted by time within the interval
        self._jumps: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        jump_sum = np.zeros(m)
        start = 0
        for idx in np.flatnonzero(counts):
            c = counts[idx]
            u = offsets[start:start + c]
            s = sizes[start:start + c]
            order = np.argsort(u, kind="stable")
            self._jumps[int(idx)] = (u[order] * h[idx], s[order])
            jump_sum[idx] = s.sum()
            start += c
        log_incr = self._drift * h + self._w_end + jump_sum
        self._log_knots = math.log(p0) + np.concatenate(([0.0], np.cumsum(log_incr)))
        # bridge state inside the current interval
        self._cur = -1
        self._last_s = 0.0
        self._last_w = 0.0

    @property
    def knots(self) -> np.ndarray:
        return self._knots

    @property
    def log_knots(self) -> np.ndarray:
        return self._log_knots

    def grid_price(self, i: int) -> float:
        """Price at knot ``i`` (knot 0 is time 0)."""
        return math.exp(self._log_knots[i])

    def price_at(self, t: float) -> float:
        knots = self._knots
        i = int(np.searchsorted(knots, t, side="right")) - 1
        if i >= knots.size - 1:
            if t <= knots[-1] + 1e-12:
                return math.exp(self._log_knots[-1])
            raise ValueError(f"t={t} beyond path horizon {knots[-1]}")
        if i < 0:
            raise ValueError("t must be >= 0")
        s = t - knots[i]
        if s <= 0.0:
            return math.exp(self._log_knots[i])
        h = knots[i + 1] - knots[i]
        if i != self._cur:
            self._cur, self._last_s, self._last_w = i, 0.0, 0.0
        if s < self._last_s:
            raise ValueError("bridge queries must be time-ordered")
        w_end = self._w_end[i]
        ls, lw = self._last_s, self._last_w
        if s >= h:
            w = w_end
        else:
            frac = (s - ls) / (h - ls)
            mean = lw + frac * (w_end - lw)
            var = self._sigma2 * (s - ls) * (h - s) / (h - ls)
            w = mean + math.sqrt(max(var, 0.0)) * float(self._bridge_rng.standard_normal())
        self._last_s, self._last_w = s, w
        jumps = self._jumps.get(i)
        jump_part = 0.0
        if jumps is not None:
            times, sizes = jumps
            jump_part = float(sizes[: int(np.searchsorted(times, s, side="right"))].sum())
        return math.exp(self._log_knots[i] + self._drift * s + w + jump_part)
