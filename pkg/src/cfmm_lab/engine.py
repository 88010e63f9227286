"""Event-driven Monte Carlo of one pool: block arbs, Poisson noise traders, hedged PnL.

Each trade is marked at the reference price prevailing at that instant and its
pool PnL is ``V(t+) - V(t-)``. Summing over trades gives the delta-hedged PnL
under risk-neutral dynamics, with no accrual between trades.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .agents import AgentKind, arb_fill, nt2_fill_from_draws, sample_arrivals, tilde_from_normal
from .config import SimConfig
from .pool import PoolState, fee_paid, optimal_trade
from .price_process import AnchoredPath

THREADS_ENV = "CFMM_LAB_THREADS"
BURN_IN_FRACTION = 0.10

# substream slots within a trial
_GRID, _BRIDGE, _NT1_T, _NT1_D, _NT2_T, _NT2_D, _ARB_T, _BOOT = range(8)
_EQUILIBRIUM_TRIAL = -1

# event priority at equal timestamps: noise first, arbs clean up after
_NOISE_ORDER, _ARB_ORDER = 0, 1


@dataclass(frozen=True)
class TrialResult:
    trial: int
    pnl: float
    pnl_bps_per_day: float
    volume: float
    fee_income: float
    n_arb: int
    n_nt1: int
    n_nt2: int
    arrivals_nt1: int
    arrivals_nt2: int
    sq_move: float  # realized sum of squared relative price moves
    p0: float
    pT: float
    x0: float
    y0: float
    xT: float
    yT: float

    @property
    def v0(self) -> float:
        return self.x0 * self.p0 + self.y0

    @property
    def vT(self) -> float:
        return self.xT * self.pT + self.yT

    @property
    def trade_count(self) -> int:
        return self.n_arb + self.n_nt1 + self.n_nt2

    def to_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BatchStats:
    trials: int
    horizon_days: float
    mean_pnl_bps_per_day: float
    stderr: float
    mean_fee_bps_per_day: float
    fee_stderr: float
    trade_rates: dict  # nonzero trades per day by agent kind
    arrival_rates: dict  # noise arrivals per day by kind
    mean_volume_per_day: float
    seed: int
    config_hash: str

    @property
    def total_trade_rate(self) -> float:
        return sum(self.trade_rates.values())


@dataclass(frozen=True)
class EquilibriumSample:
    log_ratio: np.ndarray  # log(p_hat / p)

    def __post_init__(self):
        arr = np.asarray(self.log_ratio, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("equilibrium samples must be finite")
        object.__setattr__(self, "log_ratio", arr)

    def __len__(self):
        return self.log_ratio.size


def trial_streams(master_seed: int, trial_index: int) -> list[np.random.Generator]:
    """Independent generators for each random component of one trial."""
    ss = np.random.SeedSequence([master_seed & 0xFFFFFFFF, trial_index & 0xFFFFFFFF,
                                 int(trial_index < 0)])
    return [np.random.default_rng(s) for s in ss.spawn(8)]


def _block_times(horizon: float, interval: float) -> np.ndarray:
    n = int(math.floor(horizon / interval + 1e-9))
    return interval * np.arange(1, n + 1)


def _simulate(config: SimConfig, state: PoolState, p0: float, horizon: float,
              streams, record: bool = False, trade_log: list | None = None):
    """Core loop. Returns accumulators and, if ``record``, post-block log(p_hat/p).

    If ``trade_log`` is a list, each nonzero fill is appended to it as
    ``(t, kind, u_x, u_y, x_pre, y_pre, p)``.
    """
    blocks = _block_times(horizon, config.block_interval)
    path = AnchoredPath(p0, config.mjd, horizon, blocks, streams[_GRID], streams[_BRIDGE])

    times = []
    kinds = []
    orders = []
    if config.arb is not None:
        arb_times = blocks if config.arb_rate is None else sample_arrivals(
            config.arb_rate, horizon, streams[_ARB_T])
        times.append(arb_times)
        kinds.append(np.full(arb_times.size, 0))
        orders.append(np.full(arb_times.size, _ARB_ORDER))
    nt1_z = nt2_dir = nt2_size = None
    n1 = n2 = 0
    if config.nt1 is not None and config.nt1.lambda_delta > 0:
        t1 = sample_arrivals(config.nt1.lambda_delta, horizon, streams[_NT1_T])
        n1 = t1.size
        nt1_z = streams[_NT1_D].standard_normal(n1)
        times.append(t1)
        kinds.append(np.full(n1, 1))
        orders.append(np.full(n1, _NOISE_ORDER))
    if config.nt2 is not None and config.nt2.rate_nt > 0:
        t2 = sample_arrivals(config.nt2.rate_nt, horizon, streams[_NT2_T])
        n2 = t2.size
        d = streams[_NT2_D]
        nt2_dir = d.random(n2) < 0.5
        nt2_size = d.standard_exponential(n2)
        times.append(t2)
        kinds.append(np.full(n2, 2))
        orders.append(np.full(n2, _NOISE_ORDER))

    if times:
        all_t = np.concatenate(times)
        all_k = np.concatenate(kinds)
        all_o = np.concatenate(orders)
        seq = np.concatenate([np.arange(t.size) for t in times])
        perm = np.lexsort((all_o, all_t))
        ev_t, ev_k, ev_i = all_t[perm].tolist(), all_k[perm].tolist(), seq[perm].tolist()
    else:
        ev_t, ev_k, ev_i = [], [], []

    fees = config.fees
    arb = config.arb
    sigma_delta = config.nt1.sigma_delta if config.nt1 is not None else 0.0
    size_scale = config.nt2.size_scale if config.nt2 is not None else 0.0
    x, y = state.x, state.y
    p_prev = p0
    dvs = []
    fee_terms = []
    sq_terms = []
    volume_terms = []
    counts = [0, 0, 0]
    record_z = [] if record else None

    for t, k, i in zip(ev_t, ev_k, ev_i):
        p = path.price_at(t)
        rel = p / p_prev - 1.0
        sq_terms.append(rel * rel)
        p_prev = p
        cur = PoolState(x, y)
        if k == 0:
            fill = arb_fill(cur, p, fees, arb)
        elif k == 1:
            fill = optimal_trade(cur, tilde_from_normal(p, sigma_delta, nt1_z[i]), fees)
        else:
            fill = nt2_fill_from_draws(cur, size_scale, bool(nt2_dir[i]), float(nt2_size[i]), fees)
        if not fill.is_zero:
            nx, ny = x - fill.u_x, y - fill.u_y
            if not (nx > 0 and ny > 0):
                raise RuntimeError(f"infeasible fill {fill} at t={t}")
            # V(t+) - V(t-) at the prevailing reference price
            dvs.append(-(fill.u_x * p + fill.u_y))
            fee_terms.append(fee_paid(fill, fees, p))
            volume_terms.append(abs(fill.u_y))
            counts[k] += 1
            if trade_log is not None:
                trade_log.append((t, k, fill.u_x, fill.u_y, x, y, p))
            x, y = nx, ny
        if record and k == 0:
            record_z.append(math.log(y / (x * p)))
    pT = path.price_at(horizon)
    rel = pT / p_prev - 1.0
    sq_terms.append(rel * rel)
    acc = dict(
        pnl=math.fsum(dvs), fee_income=math.fsum(fee_terms), volume=math.fsum(volume_terms),
        sq_move=math.fsum(sq_terms), n_arb=counts[0], n_nt1=counts[1], n_nt2=counts[2],
        arrivals_nt1=n1, arrivals_nt2=n2, pT=pT, xT=x, yT=y, path=path,
    )
    return acc, record_z


def equilibrium_samples(config: SimConfig, days: float | None = None) -> EquilibriumSample:
    """Post-block log(p_hat/p) from one long run of the configured agent mix.

    The run starts with the pool at the reference price; the first 10% of the
    recorded ticks are discarded as burn-in. Deterministic in ``master_seed``.
    """
    if config.arb is None:
        raise ValueError("equilibrium sampling needs arbitrageurs")
    days = config.equilibrium_days if days is None else days
    streams = trial_streams(config.master_seed, _EQUILIBRIUM_TRIAL)
    p0 = config.p0
    state = PoolState.from_value(config.v0, p0)
    _, z = _simulate(config, state, p0, days, streams, record=True)
    z = np.asarray(z)
    return EquilibriumSample(z[int(BURN_IN_FRACTION * z.size):])


def bootstrap_equilibrium(samples: EquilibriumSample, rng: np.random.Generator) -> float:
    """Uniform draw of an initial log(p_hat/p) from the sample set."""
    if len(samples) == 0:
        raise ValueError("empty equilibrium sample set")
    return float(samples.log_ratio[rng.integers(len(samples))])


def run_trial(config: SimConfig, trial_index: int, equilibrium: EquilibriumSample | None = None,
              rng=None) -> TrialResult:
    """One trial; all randomness comes from ``(master_seed, trial_index)`` substreams."""
    streams = trial_streams(config.master_seed, trial_index) if rng is None else rng
    p0 = config.p0
    if config.bootstrap_equilibrium:
        if equilibrium is None:
            equilibrium = equilibrium_samples(config)
        z = bootstrap_equilibrium(equilibrium, streams[_BOOT])
        state = PoolState.from_value(config.v0, p0, math.exp(z))
    else:
        state = config.initial_pool
    acc, _ = _simulate(config, state, p0, config.horizon, streams)
    v0 = state.x * p0 + state.y
    return TrialResult(
        trial=trial_index,
        pnl=acc["pnl"],
        pnl_bps_per_day=acc["pnl"] / v0 * 1e4 / config.horizon,
        volume=acc["volume"],
        fee_income=acc["fee_income"],
        n_arb=acc["n_arb"], n_nt1=acc["n_nt1"], n_nt2=acc["n_nt2"],
        arrivals_nt1=acc["arrivals_nt1"], arrivals_nt2=acc["arrivals_nt2"],
        sq_move=acc["sq_move"],
        p0=p0, pT=acc["pT"], x0=state.x, y0=state.y, xT=acc["xT"], yT=acc["yT"],
    )


def fee_income(trial: TrialResult) -> float:
    return trial.fee_income


def _run_chunk(args):
    config, indices, equilibrium = args
    return [run_trial(config, i, equilibrium) for i in indices]


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def run_trials(config: SimConfig, threads: int | None = None,
               equilibrium: EquilibriumSample | None = None) -> list[TrialResult]:
    """All trials in index order; output does not depend on ``threads``."""
    if config.bootstrap_equilibrium and equilibrium is None:
        equilibrium = equilibrium_samples(config)
    threads = resolve_threads(threads)
    indices = list(range(config.trials))
    if threads == 1 or config.trials == 1:
        return [run_trial(config, i, equilibrium) for i in indices]
    chunks = [indices[j::threads] for j in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [(config, c, equilibrium) for c in chunks]))
    out = [r for part in parts for r in part]
    out.sort(key=lambda r: r.trial)
    return out


def _mean_stderr(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = math.fsum(arr) / arr.size
    if arr.size < 2:
        return mean, float("nan")
    var = math.fsum((arr - mean) ** 2) / (arr.size - 1)
    return mean, math.sqrt(var / arr.size)


def summarize(config: SimConfig, trials: list[TrialResult]) -> BatchStats:
    n = len(trials)
    h = config.horizon
    mean, se = _mean_stderr([t.pnl_bps_per_day for t in trials])
    fee_mean, fee_se = _mean_stderr([t.fee_income / t.v0 * 1e4 / h for t in trials])
    total_days = n * h
    rates = {
        AgentKind.ARB.value: sum(t.n_arb for t in trials) / total_days,
        AgentKind.NT1.value: sum(t.n_nt1 for t in trials) / total_days,
        AgentKind.NT2.value: sum(t.n_nt2 for t in trials) / total_days,
    }
    arrivals = {
        AgentKind.NT1.value: sum(t.arrivals_nt1 for t in trials) / total_days,
        AgentKind.NT2.value: sum(t.arrivals_nt2 for t in trials) / total_days,
    }
    return BatchStats(
        trials=n, horizon_days=h,
        mean_pnl_bps_per_day=mean, stderr=se,
        mean_fee_bps_per_day=fee_mean, fee_stderr=fee_se,
        trade_rates=rates, arrival_rates=arrivals,
        mean_volume_per_day=math.fsum(t.volume for t in trials) / total_days,
        seed=config.master_seed, config_hash=config.digest(),
    )


def run_batch(config: SimConfig, threads: int | None = None,
              equilibrium: EquilibriumSample | None = None) -> BatchStats:
    if config.trials < 2:
        raise ValueError("run_batch needs at least 2 trials")
    return summarize(config, run_trials(config, threads, equilibrium))


def simulate_market_data(config: SimConfig, days: float):
    """Synthetic reference prices and pool trades from one run of ``config``.

    Returns ``(times, prices, trades)``: the reference price at every block
    tick (plus t=0) and the trade log of ``_simulate``. Deterministic in
    ``master_seed``.
    """
    streams = trial_streams(config.master_seed, -2)
    trades = []
    acc, _ = _simulate(config, config.initial_pool, config.p0, days, streams, trade_log=trades)
    path = acc["path"]
    times = path.knots
    prices = np.exp(path.log_knots)
    return times, prices, trades
