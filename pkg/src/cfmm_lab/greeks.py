"""Greeks of the LP position by Monte Carlo with common random numbers, and the LVR closed form."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .agents import ArbParams, NT2Params
from .config import SimConfig
from .engine import EquilibriumSample, TrialResult, equilibrium_samples, run_trials
from .pool import FeeParams, PoolState
from .price_process import log_return_variance

PARAMETERS = ("fee", "arb_edge", "nt2_rate", "nt2_size")
DEFAULT_BUMPS = {"fee": 1.0, "arb_edge": 1.0, "nt2_rate": 0.01, "nt2_size": 0.01}
UNITS = {
    "fee": "bps/day per 1bp fee",
    "arb_edge": "bps/day per 1bp arb edge",
    "nt2_rate": "bps/day per 1% rate",
    "nt2_size": "bps/day per 1% size",
}


class GreeksError(RuntimeError):
    pass


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class Sensitivity:
    parameter: str
    value: float
    stderr: float
    bump: float
    unit: str
    scheme: str  # "central" or "forward"
    common_random_numbers: bool = True


@dataclass(frozen=True)
class PnLDecomposition:
    total: float
    fee_term: float
    gamma_term: float
    higher_order: float
    gamma: float  # normalized gamma used for the quadratic term


@dataclass(frozen=True)
class GreeksReport:
    delta: Estimate
    unhedged_delta: Estimate
    gamma: Estimate
    theta_analogue: Estimate
    sensitivities: dict = field(default_factory=dict)
    lvr_bps_per_day: float = float("nan")
    seed: int = 0
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def analytic_gamma_constant_product() -> float:
    """``p^2 V''(p) / V(p)`` for ``V(p) = 2 sqrt(k p)``: V'' = -V / (4 p^2)."""
    return -0.25


def lvr(variance_per_day: float, pool_value: float, dt: float) -> float:
    """Loss-versus-rebalancing of a constant-product pool over ``dt`` days."""
    if variance_per_day < 0:
        raise ValueError("variance must be >= 0")
    return variance_per_day / 8.0 * pool_value * dt


def _mean_se(values) -> Estimate:
    arr = np.asarray(values, dtype=float)
    mean = math.fsum(arr) / arr.size
    if arr.size < 2:
        return Estimate(mean, float("nan"))
    var = math.fsum((arr - mean) ** 2) / (arr.size - 1)
    return Estimate(mean, math.sqrt(var / arr.size))


def _fee_bps_per_day(t: TrialResult, horizon: float) -> float:
    return t.fee_income / t.v0 * 1e4 / horizon


def estimate_gamma(config: SimConfig, threads=None) -> Estimate:
    """Normalized gamma from the unhedged P&L of held pools over the trial horizon.

    Per trial ``y = (V_T - V_0 - x_0 (p_T - p_0)) / V_0`` is regressed through
    the origin on ``0.5 R^2`` with ``R = p_T / p_0 - 1``. The slope is
    ``p^2 V'' / V``; its stderr is heteroskedasticity-robust.
    """
    if not log_return_variance(config.mjd, 1.0) > 0:
        raise GreeksError("zero-variance price model cannot identify gamma")
    trials = run_trials(config, threads)
    y = np.array([(t.vT - t.v0 - t.x0 * (t.pT - t.p0)) / t.v0 for t in trials])
    r = np.array([t.pT / t.p0 - 1.0 for t in trials])
    z = 0.5 * r * r
    szz = math.fsum(z * z)
    if not np.isfinite(szz) or np.max(np.abs(r)) < 1e-12:
        raise GreeksError("no price variation to identify gamma")
    g = math.fsum(z * y) / szz
    resid = y - g * z
    se = math.sqrt(math.fsum(z * z * resid * resid)) / szz
    return Estimate(g, se)


def gamma_config(config: SimConfig) -> SimConfig:
    """Fee-free, arbs-only version of ``config`` for the pure gamma measurement."""
    return config.with_(fees=FeeParams(1.0), nt1=None, nt2=None, arb=ArbParams(),
                        bootstrap_equilibrium=False, initial_price=None)


def pnl_decomposition(config: SimConfig, gamma: float | None = None, threads=None,
                      trials: list[TrialResult] | None = None) -> PnLDecomposition:
    """Split mean bps/day into fee income, the quadratic term and a remainder.

    The quadratic term is ``0.5 * gamma * E[sum of squared relative moves]``
    per unit ``V_0``; ``gamma`` defaults to the constant-product value.
    """
    gamma = analytic_gamma_constant_product() if gamma is None else gamma
    trials = run_trials(config, threads) if trials is None else trials
    h = config.horizon
    total = math.fsum(t.pnl_bps_per_day for t in trials) / len(trials)
    fee = math.fsum(_fee_bps_per_day(t, h) for t in trials) / len(trials)
    sq = math.fsum(t.sq_move for t in trials) / len(trials)
    gamma_term = 0.5 * gamma * sq / h * 1e4
    return PnLDecomposition(total=total, fee_term=fee, gamma_term=gamma_term,
                            higher_order=total - fee - gamma_term, gamma=gamma)


def _bumped(config: SimConfig, parameter: str, amount: float) -> SimConfig:
    if parameter == "fee":
        fee_bps = (1.0 - config.fees.gamma) * 1e4 + amount
        if not 0 <= fee_bps < 1e4:
            raise GreeksError(f"fee bump leaves (0, 1]: {fee_bps}bp")
        return config.with_(fees=FeeParams.from_bps(fee_bps))
    if parameter == "arb_edge":
        if config.arb is None:
            raise GreeksError("config has no arbitrageurs")
        return config.with_(arb=ArbParams(config.arb.edge_bps + amount))
    if config.nt2 is None:
        raise GreeksError("config has no NT2 traders")
    if parameter == "nt2_rate":
        return config.with_(nt2=NT2Params(config.nt2.rate_nt * (1.0 + amount), config.nt2.size_scale))
    if parameter == "nt2_size":
        return config.with_(nt2=NT2Params(config.nt2.rate_nt, config.nt2.size_scale * (1.0 + amount)))
    raise ValueError(f"unknown parameter {parameter!r}; expected one of {PARAMETERS}")


def _equilibrium_for(config: SimConfig, equilibrium):
    if config.bootstrap_equilibrium and equilibrium is None:
        return equilibrium_samples(config)
    return equilibrium


def sensitivity(config: SimConfig, parameter: str, bump: float | None = None,
                crn: bool = True, threads=None,
                equilibrium: EquilibriumSample | None = None) -> Sensitivity:
    """Finite-difference derivative of mean PnL (bps/day) in one parameter.

    Fee and arb edge are bumped in absolute bps; NT2 rate and size by a
    relative amount, reported per 1%. With ``crn`` both legs reuse the base
    seed; otherwise each leg gets its own. Both legs start from the base
    config's equilibrium sample. Arb edge cannot go below zero, so at zero
    edge a forward difference is used.
    """
    if parameter not in PARAMETERS:
        raise ValueError(f"unknown parameter {parameter!r}; expected one of {PARAMETERS}")
    bump = DEFAULT_BUMPS[parameter] if bump is None else bump
    if not bump > 0:
        raise ValueError("bump must be > 0")
    equilibrium = _equilibrium_for(config, equilibrium)
    forward = parameter == "arb_edge" and config.arb is not None and config.arb.edge_bps < bump
    up = _bumped(config, parameter, bump)
    down = config if forward else _bumped(config, parameter, -bump)
    if not crn:
        up = up.with_(master_seed=config.master_seed + 1)
        down = down.with_(master_seed=config.master_seed + 2)
    a = run_trials(up, threads, equilibrium)
    b = run_trials(down, threads, equilibrium)
    span = bump if forward else 2.0 * bump
    per = 0.01 if parameter in ("nt2_rate", "nt2_size") else 1.0
    diff = np.array([(u.pnl_bps_per_day - d.pnl_bps_per_day) for u, d in zip(a, b)]) / span * per
    est = _mean_se(diff)
    if not (np.isfinite(est.value) and np.isfinite(est.stderr)):
        raise GreeksError(f"non-finite difference for {parameter}")
    return Sensitivity(parameter, est.value, est.stderr, bump, UNITS[parameter],
                       "forward" if forward else "central", crn)


def _scaled(config: SimConfig, c: float) -> SimConfig:
    """Every numeraire-denominated quantity times ``c``."""
    pool = config.initial_pool
    changes = dict(initial_price=config.p0 * c, initial_pool=PoolState(pool.x, pool.y * c))
    if config.nt2 is not None:
        changes["nt2"] = NT2Params(config.nt2.rate_nt, config.nt2.size_scale * c)
    return config.with_(**changes)


def delta_check(config: SimConfig, rel_bump: float = 0.01, threads=None) -> tuple[Estimate, Estimate]:
    """Price-level derivatives under common random numbers.

    Returns ``(hedged, unhedged)``. Hedged: change in mean PnL (bps/day) per
    unit relative change of the price level. Unhedged: ``p dE[V_T]/dp0 / V_0``
    for fixed reserves, which is the pool's risky share (about 0.5).
    """
    if config.mjd.diffusion.mu_D != 0 or config.mjd.jumps.mu_J != 0:
        raise GreeksError("delta_check needs risk-neutral dynamics")
    up, down = _scaled(config, 1 + rel_bump), _scaled(config, 1 - rel_bump)
    eq_up = _equilibrium_for(up, None)
    eq_down = _equilibrium_for(down, None)
    a = run_trials(up, threads, eq_up)
    b = run_trials(down, threads, eq_down)
    hedged = _mean_se([(u.pnl_bps_per_day - d.pnl_bps_per_day) / (2 * rel_bump)
                       for u, d in zip(a, b)])

    held = config.with_(bootstrap_equilibrium=False)
    p0, v0 = held.p0, held.v0
    hu = run_trials(held.with_(initial_price=p0 * (1 + rel_bump)), threads)
    hd = run_trials(held.with_(initial_price=p0 * (1 - rel_bump)), threads)
    unhedged = _mean_se([(u.vT - d.vT) / (2 * rel_bump * v0) for u, d in zip(hu, hd)])
    return hedged, unhedged


def greeks_report(config: SimConfig, threads=None, parameters=PARAMETERS) -> GreeksReport:
    eq = _equilibrium_for(config, None)
    base = run_trials(config, threads, eq)
    theta = _mean_se([_fee_bps_per_day(t, config.horizon) for t in base])
    gamma = estimate_gamma(gamma_config(config), threads)
    delta, unhedged = delta_check(config, threads=threads)
    sens = {}
    for name in parameters:
        if name.startswith("nt2") and config.nt2 is None:
            continue
        if name == "arb_edge" and config.arb is None:
            continue
        sens[name] = sensitivity(config, name, threads=threads, equilibrium=eq)
    lvr_bps = lvr(log_return_variance(config.mjd, 1.0), 1.0, 1.0) * 1e4
    return GreeksReport(delta=delta, unhedged_delta=unhedged, gamma=gamma, theta_analogue=theta,
                        sensitivities=sens, lvr_bps_per_day=lvr_bps, seed=config.master_seed,
                        config_hash=config.digest())
