"""Calibration: MJD maximum likelihood, private-value extraction, arrival rates, NT2 fit."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .agents import NT1Params, NT2Params
from .config import SimConfig
from .pool import FeeParams, Fill, PoolState, invert_trade
from .price_process import MJDParams, PricePath

log = logging.getLogger(__name__)

DEFAULT_N_MAX = 3
ARB_DELTA_THRESHOLD = 1e-4  # |delta| at or below this is attributed to arbitrage


class CalibrationError(RuntimeError):
    def __init__(self, message, best=None, info=None):
        super().__init__(message)
        self.best = best
        self.info = info or {}


@dataclass(frozen=True)
class ReturnSeries:
    dt: float
    returns: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not np.all(np.isfinite(r)):
            raise ValueError("returns must be finite")
        object.__setattr__(self, "returns", r)

    def __len__(self):
        return self.returns.size

    @classmethod
    def from_prices(cls, path: PricePath, rel_tol: float = 1e-3) -> tuple[ReturnSeries, int]:
        """Log returns over the modal sampling interval; other gaps are dropped.

        Returns the series and the number of dropped intervals.
        """
        if len(path) < 2:
            raise ValueError("need at least two prices")
        gaps = np.diff(path.times)
        dt = float(np.median(gaps))
        keep = np.abs(gaps - dt) <= rel_tol * dt
        r = np.diff(np.log(path.prices))[keep]
        return cls(dt, r), int((~keep).sum())


@dataclass(frozen=True)
class TradeRecord:
    timestamp: float  # days
    u_x: float
    u_y: float
    x: float  # pre-trade reserves
    y: float

    def __post_init__(self):
        if self.u_x == 0 and self.u_y == 0:
            raise ValueError("trade record has a zero fill")
        if not (self.x > 0 and self.y > 0):
            raise ValueError("pre-trade reserves must be positive")

    @property
    def fill(self) -> Fill:
        return Fill(self.u_x, self.u_y)

    @property
    def pre_state(self) -> PoolState:
        return PoolState(self.x, self.y)


@dataclass(frozen=True)
class MJDFit:
    params: MJDParams
    loglik: float
    converged: bool
    starts: int
    starts_converged: int
    stderr: dict = field(default_factory=dict)  # Hessian-based, per parameter


@dataclass(frozen=True)
class DeltaSamples:
    delta: np.ndarray  # p_tilde / p - 1
    log_tilde_over_pool: np.ndarray  # log(p_tilde / p_hat_pre)
    ref_price: np.ndarray
    index: np.ndarray  # positions of the used trades in the input list
    skipped: int


@dataclass(frozen=True)
class CalibrationResult:
    mjd: MJDParams
    nt1: NT1Params
    nt2: NT2Params
    loglik: float
    diagnostics: dict


# -- price model -------------------------------------------------------------

def _mixture_terms(r, dt, sigma_D, lam, sigma_J, mu_D, mu_J, n_max):
    k = np.arange(n_max + 1)[:, None]
    lam_dt = lam * dt
    if lam_dt > 0:
        log_w = k * math.log(lam_dt) - lam_dt - special.gammaln(k + 1)
    else:
        log_w = np.where(k == 0, 0.0, -np.inf)
    var = sigma_D**2 * dt + k * sigma_J**2
    mean = mu_D * dt + k * mu_J
    resid = r[None, :] - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        log_phi = -0.5 * np.log(2 * np.pi * var) - 0.5 * resid**2 / var
    return log_w + log_phi, var, resid, k


def mjd_log_likelihood(series: ReturnSeries, params: MJDParams, n_max: int = DEFAULT_N_MAX) -> float:
    """Truncated Poisson-mixture log likelihood with at most ``n_max`` jumps per interval."""
    if len(series) == 0:
        raise ValueError("empty return series")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if not params.sigma_D**2 * series.dt > 0:
        raise ValueError("mixture variance at k=0 must be positive (sigma_D > 0)")
    d, j = params.diffusion, params.jumps
    terms, *_ = _mixture_terms(series.returns, series.dt, d.sigma_D, j.lambda_J, j.sigma_J,
                               d.mu_D, j.mu_J, n_max)
    return float(special.logsumexp(terms, axis=0).sum())


def _neg_loglik_and_grad(theta, r, dt, n_max):
    """Objective in (log sigma_D, log lambda, log sigma_J) with drifts pinned at zero."""
    sigma_D, lam, sigma_J = np.exp(theta)
    terms, var, resid, k = _mixture_terms(r, dt, sigma_D, lam, sigma_J, 0.0, 0.0, n_max)
    lse = special.logsumexp(terms, axis=0)
    resp = np.exp(terms - lse)
    dlogphi_dvar = -0.5 / var + 0.5 * resid**2 / var**2
    g_sigma_D = np.sum(resp * dlogphi_dvar) * 2 * sigma_D**2 * dt
    g_lam = np.sum(resp * (k - lam * dt))
    g_sigma_J = np.sum(resp * dlogphi_dvar * 2 * k * sigma_J**2)
    n = r.size
    return -lse.sum() / n, -np.array([g_sigma_D, g_lam, g_sigma_J]) / n


def _initial_guess(r, dt):
    mad = np.median(np.abs(r - np.median(r))) * 1.4826
    sigma_D = max(mad, 1e-12) / math.sqrt(dt)
    big = np.abs(r) > 5 * mad
    n_big = int(big.sum())
    period = r.size * dt
    lam = max(n_big, 1) / period
    sigma_J = float(np.sqrt(np.mean(r[big] ** 2))) if n_big else 5 * mad
    return np.log([sigma_D, lam, max(sigma_J, 1e-8)])


def fit_mjd(series: ReturnSeries, n_max: int = DEFAULT_N_MAX, starts: int = 8,
            seed: int = 0, gtol: float = 1e-8) -> MJDFit:
    """Maximum likelihood fit of (sigma_D, lambda_J, sigma_J) with mu_D = mu_J = 0.

    Multi-start L-BFGS-B in log-parameter space. Raises ``CalibrationError``
    carrying the best parameters found if no start converges.
    """
    r = series.returns
    if r.size < 2:
        raise ValueError("need at least two returns")
    dt = series.dt
    base = _initial_guess(r, dt)
    rng = np.random.default_rng(seed)
    guesses = [base] + [base + rng.normal(0.0, [0.3, 1.0, 0.5]) for _ in range(starts - 1)]
    bounds = [(math.log(1e-8), math.log(1e3)), (math.log(1e-6), math.log(1e5)),
              (math.log(1e-8), math.log(5.0))]
    best = None
    n_conv = 0
    for g0 in guesses:
        g0 = np.clip(g0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = optimize.minimize(_neg_loglik_and_grad, g0, args=(r, dt, n_max), jac=True,
                                method="L-BFGS-B", bounds=bounds,
                                options=dict(gtol=gtol, ftol=1e-15, maxiter=500))
        ok = bool(res.success)
        n_conv += ok
        if best is None or res.fun < best[0].fun or (ok and not best[1]):
            if best is None or res.fun <= best[0].fun:
                best = (res, ok)
    res, _ = best
    sigma_D, lam, sigma_J = np.exp(res.x)
    params = MJDParams.from_values(float(sigma_D), float(lam), float(sigma_J))
    if n_conv == 0:
        raise CalibrationError("MJD likelihood optimizer did not converge", best=params,
                               info={"message": str(res.message)})
    stderr = _hessian_stderr(res.x, r, dt, n_max)
    return MJDFit(params=params, loglik=float(-res.fun * r.size), converged=True,
                  starts=len(guesses), starts_converged=n_conv, stderr=stderr)


def _hessian_stderr(theta, r, dt, n_max) -> dict:
    """Delta-method standard errors from a finite-difference Hessian of the log likelihood."""
    n = r.size
    h = 1e-5
    hess = np.empty((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        gp = _neg_loglik_and_grad(theta + e, r, dt, n_max)[1]
        gm = _neg_loglik_and_grad(theta - e, r, dt, n_max)[1]
        hess[i] = (gp - gm) / (2 * h) * n
    hess = 0.5 * (hess + hess.T)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        return {}
    vals = np.exp(theta)
    se = vals * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return dict(zip(("sigma_D", "lambda_J", "sigma_J"), map(float, se)))


# -- private values ------------------------------------------------------------

def extract_delta_samples(trades: list[TradeRecord], refs: PricePath,
                          fees: FeeParams = FeeParams()) -> DeltaSamples:
    """Invert each trade to the private price it implies and compare to the reference."""
    ts = np.array([t.timestamp for t in trades], dtype=float)
    ref = refs.log_interp(ts) if ts.size else np.empty(0)
    deltas, rel_pool, used, prices = [], [], [], []
    skipped = 0
    for i, (tr, p) in enumerate(zip(trades, ref)):
        if not np.isfinite(p):
            skipped += 1
            continue
        p_tilde = invert_trade(tr.pre_state, tr.fill, fees)
        deltas.append(p_tilde / p - 1.0)
        rel_pool.append(math.log(p_tilde * tr.x / tr.y))
        used.append(i)
        prices.append(p)
    if skipped:
        log.info("skipped %d trades outside reference coverage", skipped)
    return DeltaSamples(np.array(deltas), np.array(rel_pool), np.array(prices),
                        np.array(used, dtype=int), skipped)


def fit_nt1_sigma(samples: DeltaSamples, trades: list[TradeRecord], fees: FeeParams = FeeParams(),
                  arb_threshold: float = ARB_DELTA_THRESHOLD) -> float:
    """Censoring-corrected MLE of sigma_delta from observed (non-arb) trades.

    A trader only shows up if ``log(p_tilde/p)`` lies outside the band implied by
    the pre-trade pool, so each observation is weighted by its selection
    probability under ``log(1 + delta) ~ N(-s^2/2, s^2)``.
    """
    mask = np.abs(samples.delta) > arb_threshold
    if mask.sum() < 2:
        raise CalibrationError("not enough non-arbitrage trades to fit sigma_delta")
    ell = np.log1p(samples.delta[mask])
    idx = samples.index[mask]
    x = np.array([trades[i].x for i in idx])
    y = np.array([trades[i].y for i in idx])
    p = samples.ref_price[mask]
    log_rel = np.log(y / (x * p))
    lo = math.log(fees.gamma) + log_rel
    hi = -math.log(fees.gamma) + log_rel

    def nll(log_s):
        s = math.exp(log_s)
        m = -0.5 * s * s
        sel = stats.norm.cdf((lo - m) / s) + stats.norm.sf((hi - m) / s)
        return -(stats.norm.logpdf(ell, m, s) - np.log(np.maximum(sel, 1e-300))).sum()

    s0 = max(float(np.std(ell)), 1e-6)
    res = optimize.minimize_scalar(nll, bounds=(math.log(s0) - 8, math.log(s0) + 3), method="bounded",
                                   options=dict(xatol=1e-10))
    s = math.exp(res.x)
    return math.sqrt(math.expm1(s * s))


def _simulated_trade_rate(config: SimConfig, threads=None) -> float:
    from .engine import run_trials

    trials = run_trials(config, threads)
    return sum(t.trade_count for t in trials) / (len(trials) * config.horizon)


def calibrate_arrival_rate(observed_rate: float, config: SimConfig, kind: str = "nt1",
                           lo: float = 0.0, hi: float | None = None, rel_tol: float = 0.02,
                           max_iter: int = 60, threads=None) -> float:
    """Arrival rate for ``kind`` at which simulated nonzero trades/day match ``observed_rate``.

    Every evaluation reuses ``config.master_seed`` so the simulated rate is a
    deterministic, essentially monotone function of the arrival rate.
    """
    if not observed_rate > 0:
        raise ValueError("observed_rate must be > 0")
    if kind not in ("nt1", "nt2"):
        raise ValueError("kind must be 'nt1' or 'nt2'")
    hi = 20.0 * observed_rate if hi is None else hi

    def with_rate(lam):
        if kind == "nt1":
            base = config.nt1 or NT1Params(0.0, 0.0)
            return config.with_(nt1=NT1Params(lam, base.sigma_delta))
        base = config.nt2 or NT2Params(0.0, 1.0)
        return config.with_(nt2=NT2Params(lam, base.size_scale))

    def gap(lam):
        return _simulated_trade_rate(with_rate(lam), threads) - observed_rate

    f_lo, f_hi = gap(lo), gap(hi)
    if f_lo > 0 or f_hi < 0:
        raise CalibrationError(
            f"target {observed_rate}/day not bracketed: rate({lo})-target={f_lo:.3g}, "
            f"rate({hi})-target={f_hi:.3g}", info={"lo": lo, "hi": hi, "f_lo": f_lo, "f_hi": f_hi})
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = gap(mid)
        if abs(f_mid) <= rel_tol * observed_rate:
            return mid
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection did not reach tolerance", best=0.5 * (lo + hi),
                           info={"lo": lo, "hi": hi})


def fit_nt2(trades: list[TradeRecord], refs: PricePath, fees: FeeParams = FeeParams(),
            arb_threshold: float = ARB_DELTA_THRESHOLD) -> NT2Params:
    """Mean numeraire notional and arrivals/day of trades not attributed to arbitrage."""
    if not trades:
        raise ValueError("no trades to fit")
    span = float(refs.times[-1] - refs.times[0])
    if not span > 0:
        raise ValueError("reference path must span a positive time")
    samples = extract_delta_samples(trades, refs, fees)
    mask = np.abs(samples.delta) > arb_threshold
    if not mask.any():
        raise CalibrationError("every trade was attributed to arbitrage")
    sizes = np.array([abs(trades[i].u_y) for i in samples.index[mask]])
    return NT2Params(rate_nt=float(mask.sum()) / span, size_scale=float(sizes.mean()))


def calibrate(prices: PricePath, trades: list[TradeRecord], fees: FeeParams = FeeParams(),
              n_max: int = DEFAULT_N_MAX, rate_config: SimConfig | None = None,
              seed: int = 0) -> CalibrationResult:
    """Full pipeline: MJD by MLE, NT1 offset law and arrival rate, NT2 size and rate.

    ``rate_config`` is the simulation used to undo censoring when matching the
    observed trade rate; pass ``None`` to use a short default run.
    """
    if not trades:
        raise ValueError("no trades to calibrate against")
    series, dropped = ReturnSeries.from_prices(prices)
    fit = fit_mjd(series, n_max=n_max, seed=seed)
    samples = extract_delta_samples(trades, prices, fees)
    sigma_delta = fit_nt1_sigma(samples, trades, fees)
    span = float(prices.times[-1] - prices.times[0])
    observed_rate = len(samples.delta) / span
    nt2 = fit_nt2(trades, prices, fees)

    if rate_config is None:
        rate_config = SimConfig(mjd=fit.params, fees=fees, trials=48, horizon=1.0 / 24,
                                master_seed=seed, bootstrap_equilibrium=True,
                                equilibrium_days=1.0)
    rate_config = rate_config.with_(mjd=fit.params, fees=fees,
                                    nt1=NT1Params(0.0, sigma_delta), nt2=None)
    try:
        lam = calibrate_arrival_rate(observed_rate, rate_config, kind="nt1")
        rate_ok = True
    except CalibrationError as exc:
        lam = float(exc.best) if exc.best is not None else float("nan")
        rate_ok = False
        log.warning("NT1 arrival-rate calibration failed: %s", exc)
    diagnostics = {
        "n_returns": len(series),
        "dt_days": series.dt,
        "dropped_intervals": dropped,
        "mjd_converged": fit.converged,
        "mjd_starts_converged": fit.starts_converged,
        "mjd_stderr": fit.stderr,
        "n_trades": len(trades),
        "trades_skipped": samples.skipped,
        "observed_trade_rate": observed_rate,
        "arb_attributed": int((np.abs(samples.delta) <= ARB_DELTA_THRESHOLD).sum()),
        "nt1_rate_calibrated": rate_ok,
        "n_max": n_max,
    }
    return CalibrationResult(mjd=fit.params, nt1=NT1Params(lam if np.isfinite(lam) else 0.0,
                                                           sigma_delta),
                             nt2=nt2, loglik=fit.loglik, diagnostics=diagnostics)
