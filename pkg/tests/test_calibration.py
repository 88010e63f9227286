import math

import numpy as np
import pytest
from scipy import optimize, stats

from cfmm_lab import calibration
from cfmm_lab.agents import NT1Params
from cfmm_lab.calibration import (CalibrationError, ReturnSeries, TradeRecord,
                                  calibrate_arrival_rate, extract_delta_samples, fit_mjd,
                                  fit_nt1_sigma, fit_nt2, mjd_log_likelihood)
from cfmm_lab.config import TABLE_MJD, TABLE_NT1, SimConfig, headline_config, nt1_config
from cfmm_lab.engine import simulate_market_data
from cfmm_lab.pool import FeeParams, PoolState, optimal_trade, trade_paying_numeraire
from cfmm_lab.price_process import BLOCK_INTERVAL, MJDParams, PricePath, sample_log_return

DT = BLOCK_INTERVAL


def synthetic(params, n, seed):
    return ReturnSeries(DT, sample_log_return(params, DT, np.random.default_rng(seed), size=n))


def market_records(cfg, days):
    ts, ps, log = simulate_market_data(cfg, days)
    recs = [TradeRecord(t, ux, uy, x, y) for t, _, ux, uy, x, y, _ in log]
    return PricePath(ts, ps), recs, np.array([k for _, k, *_ in log])


def test_gaussian_special_case():
    r = np.random.default_rng(0).normal(0, 0.001, 5000)
    params = MJDParams.from_values(0.07)
    ll = mjd_log_likelihood(ReturnSeries(DT, r), params, n_max=0)
    ref = stats.norm.logpdf(r, 0.0, 0.07 * math.sqrt(DT)).sum()
    assert abs(ll - ref) <= 1e-10 * abs(ref)
    # with lambda = 0 extra mixture terms carry zero weight
    assert mjd_log_likelihood(ReturnSeries(DT, r), params, n_max=3) == pytest.approx(ll, rel=1e-14)


def test_single_return_at_mode():
    params = MJDParams.from_values(0.07)
    ll = mjd_log_likelihood(ReturnSeries(DT, np.array([0.0])), params, n_max=0)
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi * 0.07**2 * DT), rel=1e-14)


def test_likelihood_errors():
    with pytest.raises(ValueError):
        mjd_log_likelihood(ReturnSeries(DT, np.array([])), TABLE_MJD)
    with pytest.raises(ValueError):
        mjd_log_likelihood(ReturnSeries(DT, np.array([0.0])), MJDParams.from_values(0.0, 1.0, 0.01))
    with pytest.raises(ValueError):
        mjd_log_likelihood(ReturnSeries(DT, np.array([0.0])), TABLE_MJD, n_max=-1)
    with pytest.raises(ValueError):
        ReturnSeries(DT, np.array([np.inf]))


def test_likelihood_dominates_perturbed_sigma():
    s = synthetic(TABLE_MJD, 200_000, 1)
    ll = mjd_log_likelihood(s, TABLE_MJD)
    for f in (0.8, 1.2):
        bumped = MJDParams.from_values(TABLE_MJD.sigma_D * f, TABLE_MJD.lambda_J, TABLE_MJD.sigma_J)
        assert ll >= mjd_log_likelihood(s, bumped)


def test_analytic_gradient_matches_finite_difference():
    s = synthetic(TABLE_MJD, 20_000, 2)
    theta = np.log([0.09, 3.0, 0.01])
    f = lambda th: calibration._neg_loglik_and_grad(th, s.returns, DT, 3)[0]  # noqa: E731
    _, grad = calibration._neg_loglik_and_grad(theta, s.returns, DT, 3)
    np.testing.assert_allclose(grad, optimize.approx_fprime(theta, f, 1e-7), rtol=1e-4, atol=1e-8)


def test_fit_gbm():
    s = synthetic(MJDParams.from_values(0.08), 100_000, 3)
    fit = fit_mjd(s)
    assert fit.converged
    assert fit.params.sigma_D == pytest.approx(0.08, rel=0.05)
    # fewer than one expected jump over the whole sample
    assert fit.params.lambda_J * len(s) * DT < 1.0


def test_fit_mjd_two_weeks_within_stderr():
    s = synthetic(TABLE_MJD, int(14 * 86400 / 15), 4)
    fit = fit_mjd(s)
    assert fit.converged and fit.starts_converged >= 1
    for name in ("sigma_D", "lambda_J", "sigma_J"):
        assert abs(getattr(fit.params, name) - getattr(TABLE_MJD, name)) < 3 * fit.stderr[name]


def test_fit_nonconvergence_reports_best(monkeypatch):
    real = optimize.minimize

    def failing(*a, **k):
        res = real(*a, **k)
        res.success = False
        return res

    monkeypatch.setattr(calibration.optimize, "minimize", failing)
    with pytest.raises(CalibrationError) as exc:
        fit_mjd(synthetic(TABLE_MJD, 5000, 5), starts=2)
    assert exc.value.best is not None


def test_return_series_drops_gaps():
    times = np.array([0.0, 1.0, 2.0, 5.0, 6.0]) * DT
    series, dropped = ReturnSeries.from_prices(PricePath(times, np.array([1.0, 1.1, 1.0, 1.2, 1.3])))
    assert dropped == 1 and len(series) == 3 and series.dt == pytest.approx(DT)


def test_delta_zero_for_fee_free_trade_at_reference():
    s = PoolState(10.0, 1000.0)
    fill = optimal_trade(s, 120.0, FeeParams(1.0))
    refs = PricePath(np.array([0.0, 1.0]), np.array([120.0, 120.0]))
    out = extract_delta_samples([TradeRecord(0.5, fill.u_x, fill.u_y, s.x, s.y)], refs, FeeParams(1.0))
    assert abs(out.delta[0]) < 1e-12 and out.skipped == 0


def test_delta_skips_outside_coverage():
    s = PoolState(10.0, 1000.0)
    fill = optimal_trade(s, 120.0, FeeParams(1.0))
    refs = PricePath(np.array([0.0, 1.0]), np.array([120.0, 120.0]))
    recs = [TradeRecord(t, fill.u_x, fill.u_y, s.x, s.y) for t in (0.5, 2.0)]
    out = extract_delta_samples(recs, refs, FeeParams(1.0))
    assert out.skipped == 1 and out.delta.size == 1


def test_trade_record_invariants():
    with pytest.raises(ValueError):
        TradeRecord(0.0, 0.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TradeRecord(0.0, 1.0, -1.0, 0.0, 1.0)


@pytest.fixture(scope="module")
def nt1_market():
    return market_records(nt1_config(bootstrap_equilibrium=False, master_seed=2), 3.0)


def test_nt1_closed_loop_sigma(nt1_market):
    refs, recs, kinds = nt1_market
    ds = extract_delta_samples(recs, refs)
    assert fit_nt1_sigma(ds, recs) == pytest.approx(TABLE_NT1.sigma_delta, rel=0.10)


def test_nt1_raw_spread_when_censoring_is_light():
    cfg = nt1_config(bootstrap_equilibrium=False, nt1=NT1Params(500.0, 0.05), master_seed=3)
    refs, recs, kinds = market_records(cfg, 3.0)
    ds = extract_delta_samples(recs, refs)
    assert ds.delta[kinds == 1].std() == pytest.approx(0.05, rel=0.10)


def test_arb_trades_sit_just_outside_band(nt1_market):
    refs, recs, kinds = nt1_market
    ds = extract_delta_samples(recs, refs)
    w = FeeParams().log_halfwidth
    excess = np.abs(ds.log_tilde_over_pool[kinds == 0]) - w
    assert np.all(excess > 0)
    assert np.median(excess) < TABLE_MJD.sigma_D * math.sqrt(DT)
    assert np.all(np.abs(ds.delta[kinds == 0]) < 1e-12)


def test_fit_nt2_single_trade():
    s = PoolState(1000.0, 100_000.0)
    fill = trade_paying_numeraire(s, 100.0, FeeParams())
    refs = PricePath(np.array([0.0, 1.0]), np.array([100.0, 100.0]))
    nt2 = fit_nt2([TradeRecord(0.5, fill.u_x, fill.u_y, s.x, s.y)], refs)
    assert nt2.size_scale == pytest.approx(100.0) and nt2.rate_nt == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_nt2([], refs)


def test_fit_nt2_closed_loop():
    refs, recs, _ = market_records(headline_config(bootstrap_equilibrium=False, master_seed=1), 2.0)
    nt2 = fit_nt2(recs, refs)
    assert nt2.size_scale == pytest.approx(14096.0, rel=0.05)


def _rate_cfg(**kw):
    return SimConfig(trials=24, **kw)


def test_arrival_rate_without_censoring():
    cfg = _rate_cfg(arb=None, nt1=NT1Params(0.0, 1.0))
    lam = calibrate_arrival_rate(2000.0, cfg, kind="nt1")
    # without censoring the trade rate is the arrival rate, up to the 2% stop and Poisson noise
    assert lam == pytest.approx(2000.0, rel=0.06)


def test_arrival_rate_monotone_and_censored():
    cfg = _rate_cfg(arb=None, nt1=TABLE_NT1)
    rates = [calibration._simulated_trade_rate(cfg.with_(nt1=NT1Params(lam, TABLE_NT1.sigma_delta)))
             for lam in (200.0, 800.0, 3200.0)]
    assert rates == sorted(rates)
    assert rates[-1] < 3200.0


def test_arrival_rate_unreachable():
    cfg = _rate_cfg(arb=None, nt1=NT1Params(0.0, 1e-6))
    with pytest.raises(CalibrationError) as exc:
        calibrate_arrival_rate(5000.0, cfg, kind="nt1", hi=10_000.0)
    assert "lo" in exc.value.info and "hi" in exc.value.info
    with pytest.raises(ValueError):
        calibrate_arrival_rate(0.0, cfg)
