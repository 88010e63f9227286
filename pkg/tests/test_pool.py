import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import optimize

from cfmm_lab.config import TABLE_POOL
from cfmm_lab.pool import (FeeParams, Fill, InfeasibleTradeError, InvalidStateError,
                           NoInversionError, PoolState, ZERO_FILL, apply_trade, curve_residual,
                           fee_paid, impermanent_loss, invert_trade, no_trade_band, optimal_trade,
                           optimal_trade_arrays, pool_implied_price, pool_value,
                           trade_paying_numeraire, trade_receiving_numeraire)

reserves = st.floats(1e-3, 1e9)
gammas = st.sampled_from([0.997, 0.999, 1.0])
log_ratio = st.floats(-1.5, 1.5)


def numeric_best(state, p_tilde, gamma):
    """Independent maximization of p_tilde*u_x + u_y along both legs of the curve."""
    x, y, g = state.x, state.y, gamma

    def buy(s):  # pay s*y numeraire, receive risky
        a = s * y
        return -(p_tilde * x * g * a / (y + g * a) - a)

    def sell(s):  # pay s*x risky, receive numeraire
        b = s * x
        return -(y * g * b / (x + g * b) - p_tilde * b)

    best = 0.0
    for f in (buy, sell):
        res = optimize.minimize_scalar(f, bounds=(0.0, 4.0), method="bounded",
                                       options=dict(xatol=1e-14))
        best = max(best, -res.fun)
    return best


def test_implied_price_examples():
    assert pool_implied_price(PoolState(1, 100)) == 100
    assert pool_implied_price(PoolState(2, 2)) == 1
    assert pool_implied_price(TABLE_POOL) == pytest.approx(1816.72, abs=0.01)
    with pytest.raises(InvalidStateError):
        PoolState(0.0, 1.0)


def test_band_examples():
    s = PoolState(1.0, 1000.0)
    assert no_trade_band(s, FeeParams(1.0)) == (1000.0, 1000.0)
    lo, hi = no_trade_band(s, FeeParams(0.997))
    assert lo == pytest.approx(997.0)
    assert hi == pytest.approx(1003.009027, rel=1e-9)


@given(x=reserves, y=reserves, g=gammas)
def test_band_contains_pool_price(x, y, g):
    lo, hi = no_trade_band(PoolState(x, y), FeeParams(g))
    assert lo <= y / x <= hi


def test_zero_fill_at_pool_price():
    s = PoolState(3.0, 7.0)
    assert optimal_trade(s, 7.0 / 3.0, FeeParams()) == ZERO_FILL


def test_band_edges_do_not_trade():
    s = PoolState(2.0, 5.0)
    lo, hi = no_trade_band(s, FeeParams(0.997))
    assert optimal_trade(s, lo, FeeParams(0.997)).is_zero
    assert optimal_trade(s, hi, FeeParams(0.997)).is_zero


@given(x=reserves, y=reserves, g=gammas, lr=log_ratio)
def test_closed_form_matches_numeric_optimum(x, y, g, lr):
    s = PoolState(x, y)
    p_tilde = y / x * math.exp(lr)
    fill = optimal_trade(s, p_tilde, FeeParams(g))
    f = fill.objective(p_tilde)
    ref = numeric_best(s, p_tilde, g)
    scale = p_tilde * x + y
    assert f >= -1e-15 * scale
    assert abs(f - ref) <= 1e-9 * max(abs(ref), 1e-6 * scale)


@given(x=reserves, y=reserves, lr=log_ratio.filter(lambda v: abs(v) > 1e-9))
def test_fee_free_trade_moves_pool_to_price(x, y, lr):
    s = PoolState(x, y)
    p_tilde = y / x * math.exp(lr)
    after = apply_trade(s, optimal_trade(s, p_tilde, FeeParams(1.0)))
    assert pool_implied_price(after) == pytest.approx(p_tilde, rel=1e-12)


@given(x=reserves, y=reserves, g=gammas, lr=log_ratio)
def test_conservation_residual(x, y, g, lr):
    s = PoolState(x, y)
    fill = optimal_trade(s, y / x * math.exp(lr), FeeParams(g))
    assume(not fill.is_zero)
    assert curve_residual(s, fill, FeeParams(g)) <= 1e-12


@given(x=reserves, y=reserves, g=gammas, lr=log_ratio)
def test_no_residual_arbitrage_after_trade(x, y, g, lr):
    s = PoolState(x, y)
    fees = FeeParams(g)
    p_tilde = y / x * math.exp(lr)
    after = apply_trade(s, optimal_trade(s, p_tilde, fees))
    lo, hi = no_trade_band(after, fees)
    assert lo * (1 - 1e-12) <= p_tilde <= hi * (1 + 1e-12)
    second = optimal_trade(after, p_tilde, fees)
    assert abs(second.objective(p_tilde)) <= 1e-12 * (p_tilde * x + y)


def test_tiny_profitable_arb_is_resolved_at_scale():
    # a 1e-8 log mispricing on a 1.4e8 pool still yields a positive objective
    s = PoolState(7.837622e4, 1.423880e8)
    p = s.y / s.x * 0.997 * (1 - 1e-8)
    fill = optimal_trade(s, p, FeeParams(0.997))
    assert fill.objective(p) > 0


@given(x=reserves, y=reserves, g=gammas, lr=log_ratio)
def test_inversion_round_trip(x, y, g, lr):
    s = PoolState(x, y)
    fees = FeeParams(g)
    p_tilde = y / x * math.exp(lr)
    fill = optimal_trade(s, p_tilde, fees)
    assume(not fill.is_zero)
    assume(abs(fill.u_x) > 1e-6 * x and abs(fill.u_y) > 1e-6 * y)
    assert invert_trade(s, fill, fees) == pytest.approx(p_tilde, rel=1e-9)
    lo, hi = no_trade_band(s, fees)
    if fill.u_x > 0:
        assert p_tilde > hi
    else:
        assert p_tilde < lo


def test_inversion_fee_free_equals_post_trade_price():
    s = PoolState(10.0, 1000.0)
    fill = optimal_trade(s, 120.0, FeeParams(1.0))
    assert invert_trade(s, fill, FeeParams(1.0)) == pytest.approx(
        pool_implied_price(apply_trade(s, fill)), rel=1e-12)


def test_inversion_zero_fill_errors():
    with pytest.raises(NoInversionError):
        invert_trade(PoolState(1, 1), ZERO_FILL, FeeParams())


@given(x=reserves, y=reserves, lr=log_ratio, f1=st.floats(0, 0.05), f2=st.floats(0, 0.05))
def test_objective_nonincreasing_in_fee(x, y, lr, f1, f2):
    lo_fee, hi_fee = sorted((f1, f2))
    s = PoolState(x, y)
    p = y / x * math.exp(lr)
    a = optimal_trade(s, p, FeeParams(1 - lo_fee)).objective(p)
    b = optimal_trade(s, p, FeeParams(1 - hi_fee)).objective(p)
    assert b <= a + 1e-12 * (p * x + y)


def test_apply_trade():
    s = PoolState(1.0, 1.0)
    assert apply_trade(s, ZERO_FILL) is s
    with pytest.raises(InfeasibleTradeError):
        apply_trade(s, Fill(1.0, -5.0))


def test_pool_value_examples():
    assert pool_value(PoolState(1, 1), 1) == 2
    assert pool_value(TABLE_POOL, TABLE_POOL.y / TABLE_POOL.x) == pytest.approx(2.847760e8)
    s = PoolState(3.0, 5.0)
    assert pool_value(s, 4.0) - pool_value(s, 2.0) == pytest.approx(3.0 * 2.0)


@given(st.tuples(reserves, reserves), st.tuples(reserves, reserves), st.tuples(reserves, reserves),
       st.floats(1e-3, 1e3))
def test_impermanent_loss_telescopes(a, b, c, p):
    A, B, C = PoolState(*a), PoolState(*b), PoolState(*c)
    assert impermanent_loss(A, A, p) == 0
    total = impermanent_loss(A, C, p)
    assert total == pytest.approx(impermanent_loss(A, B, p) + impermanent_loss(B, C, p),
                                  rel=1e-9, abs=1e-9 * (pool_value(A, p) + pool_value(C, p)))


def test_impermanent_loss_positive_after_fee_free_arb():
    s = PoolState(100.0, 100.0)
    for p in (0.5, 0.9, 1.1, 3.0):
        after = apply_trade(s, optimal_trade(s, p, FeeParams(1.0)))
        assert impermanent_loss(s, after, p) > 0


@given(x=reserves, y=reserves, g=gammas, frac=st.floats(1e-6, 0.2))
def test_notional_trades_lie_on_curve(x, y, g, frac):
    s = PoolState(x, y)
    fees = FeeParams(g)
    for fill in (trade_paying_numeraire(s, frac * y, fees), trade_receiving_numeraire(s, frac * y, fees)):
        assert curve_residual(s, fill, fees) <= 1e-12
        assert abs(fill.u_y) == pytest.approx(frac * y)


def test_fee_paid():
    assert fee_paid(Fill(1.0, -10_000.0), FeeParams(0.997), 1.0) == pytest.approx(30.0)
    assert fee_paid(Fill(-2.0, 10.0), FeeParams(0.997), 5.0) == pytest.approx(0.03)
    assert fee_paid(Fill(1.0, -10_000.0), FeeParams(1.0), 1.0) == 0.0


def test_vectorized_matches_scalar():
    r = np.random.default_rng(0)
    x, y = r.uniform(1, 10, 500), r.uniform(1, 10, 500)
    p = y / x * np.exp(r.normal(0, 0.01, 500))
    ux, uy = optimal_trade_arrays(x, y, p, 0.997)
    for i in range(500):
        f = optimal_trade(PoolState(x[i], y[i]), p[i], FeeParams(0.997))
        assert ux[i] == pytest.approx(f.u_x, rel=1e-12, abs=0)
        assert uy[i] == pytest.approx(f.u_y, rel=1e-12, abs=0)
