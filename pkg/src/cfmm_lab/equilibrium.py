"""Stationary law of the pool mispricing log(p_hat / p) when only arbitrageurs trade.

With arbitrage at every instant the mispricing is a Brownian motion confined
to the fee band, hence uniform on it. With arbitrageurs arriving as a Poisson
process of rate ``lam`` the density is flat inside the band and decays as
``exp(-eta (|z| - w))`` outside, with ``eta = sqrt(2 lam) / sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import EquilibriumSample
from .pool import FeeParams, optimal_trade_arrays
from .price_process import MJDParams, log_return_variance, sample_log_return

INSTANTANEOUS = "instantaneous"
POISSON = "poisson"


@dataclass(frozen=True)
class EquilibriumDensity:
    halfwidth: float
    decay: float = math.inf  # eta; inf means no tails

    @property
    def level(self) -> float:
        """Density value inside the band."""
        tail = 0.0 if math.isinf(self.decay) else 2.0 / self.decay
        return 1.0 / (2.0 * self.halfwidth + tail)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        w, c = self.halfwidth, self.level
        outside = np.abs(z) - w
        if math.isinf(self.decay):
            return np.where(outside <= 0, c, 0.0)
        return np.where(outside <= 0, c, c * np.exp(-self.decay * np.maximum(outside, 0.0)))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        w, c, eta = self.halfwidth, self.level, self.decay
        if math.isinf(eta):
            return np.clip((z + w) * c, 0.0, 1.0)
        left = c / eta * np.exp(eta * np.minimum(z + w, 0.0))
        mid = c / eta + c * (np.clip(z, -w, w) + w)
        right = 1.0 - c / eta * np.exp(-eta * np.maximum(z - w, 0.0))
        return np.where(z < -w, left, np.where(z > w, right, mid))


def analytic_equilibrium_density(mode: str, fee_halfwidth: float, rate: float | None = None,
                                 sigma: float | None = None) -> EquilibriumDensity:
    """Density of log(p_hat/p) for arbs-only pools.

    ``sigma`` is the log-price volatility per sqrt(day) and ``rate`` the arb
    arrival rate per day; both are needed for ``mode="poisson"`` only.
    """
    if not fee_halfwidth > 0:
        raise ValueError("fee_halfwidth must be > 0")
    if mode == INSTANTANEOUS:
        return EquilibriumDensity(fee_halfwidth)
    if mode == POISSON:
        if rate is None or sigma is None or not (rate > 0 and sigma > 0):
            raise ValueError("poisson mode needs rate > 0 and sigma > 0")
        return EquilibriumDensity(fee_halfwidth, math.sqrt(2.0 * rate) / sigma)
    raise ValueError(f"unknown mode {mode!r}")


def simulate_arb_equilibrium(mjd: MJDParams, fees: FeeParams, n_samples: int,
                             mode: str = INSTANTANEOUS, rate: float | None = None,
                             tick: float = 0.05 / 86_400, chains: int = 10_000,
                             burn_in: float = 3.0, spacing: float = 0.25,
                             seed: int = 0, p0: float = 1.0) -> EquilibriumSample:
    """Sample stationary log(p_hat/p) from many independent arbs-only pools.

    ``instantaneous``: arbs act every ``tick`` days (a fine monitoring grid),
    samples are post-arb states. ``poisson``: arbs arrive at rate ``rate`` and
    samples are the states just before each arrival, which by PASTA follow the
    time-stationary law. ``burn_in`` and ``spacing`` are in units of the band
    relaxation time ``(2w)^2 / sigma^2``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0]))
    var_rate = log_return_variance(mjd, 1.0)
    if var_rate <= 0:
        raise ValueError("stationary sampling needs positive volatility")
    w = fees.log_halfwidth if fees.gamma < 1 else 1e-4
    relax = (2.0 * w) ** 2 / var_rate
    if mode == INSTANTANEOUS:
        mean_step = tick
    elif mode == POISSON:
        if rate is None or rate <= 0:
            raise ValueError("poisson mode needs rate > 0")
        mean_step = 1.0 / rate
    else:
        raise ValueError(f"unknown mode {mode!r}")
    chains = min(chains, n_samples)
    per_chain = -(-n_samples // chains)
    burn_steps = max(1, int(math.ceil(burn_in * relax / mean_step)))
    gap_steps = max(1, int(math.ceil(spacing * relax / mean_step)))

    p = np.full(chains, p0)
    x = np.ones(chains)
    y = p0 * x
    g = fees.gamma
    out = []
    total = burn_steps + gap_steps * per_chain
    for step in range(1, total + 1):
        if mode == INSTANTANEOUS:
            p = p * np.exp(sample_log_return(mjd, tick, rng, size=chains))
        else:
            dt = rng.standard_exponential(chains) * mean_step
            p = p * np.exp(sample_log_return(mjd, dt, rng))
        take = step > burn_steps and (step - burn_steps) % gap_steps == 0
        if take and mode == POISSON:
            out.append(np.log(y / (x * p)))
        u_x, u_y = optimal_trade_arrays(x, y, p, g)
        x = x - u_x
        y = y - u_y
        if take and mode == INSTANTANEOUS:
            out.append(np.log(y / (x * p)))
    samples = np.concatenate(out)[:n_samples]
    return EquilibriumSample(samples)


def ks_distance(samples, density: EquilibriumDensity) -> float:
    """Kolmogorov-Smirnov distance between the sample ECDF and ``density``."""
    from scipy import stats

    return float(stats.kstest(np.asarray(samples.log_ratio if hasattr(samples, "log_ratio")
                                         else samples), density.cdf).statistic)
