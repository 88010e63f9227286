import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cfmm_lab import data_io
from cfmm_lab.calibration import TradeRecord
from cfmm_lab.config import SimConfig, headline_config, nt1_config
from cfmm_lab.engine import run_batch, run_trials
from cfmm_lab.greeks import greeks_report

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12)
positive = st.floats(min_value=1e-9, max_value=1e12)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=50)
@given(ts=st.lists(st.floats(0, 2e9), min_size=2, max_size=30, unique=True),
       ps=st.lists(positive, min_size=30, max_size=30))
def test_price_round_trip(tmp_path, ts, ps):
    ts = np.sort(np.array(ts))
    pf = data_io.PriceFile(ts, np.array(ps[:ts.size]))
    path = tmp_path / "p.csv"
    data_io.write_prices(path, pf)
    back = data_io.read_prices(path)
    assert np.array_equal(back.timestamps, pf.timestamps) and np.array_equal(back.prices, pf.prices)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=50)
@given(rows=st.lists(st.tuples(st.floats(0, 2e9), finite.filter(lambda v: v != 0), finite,
                               positive, positive), min_size=1, max_size=20))
def test_trade_round_trip(tmp_path, rows):
    tf = data_io.TradeFile(tuple(rows))
    path = tmp_path / "t.csv"
    data_io.write_trades(path, tf)
    assert data_io.read_trades(path) == tf


def test_trade_records_convert_units():
    tf = data_io.TradeFile(((86400.0, 1.0, -2.0, 3.0, 4.0),))
    assert tf.to_records() == [TradeRecord(1.0, 1.0, -2.0, 3.0, 4.0)]


@pytest.mark.parametrize("body,line", [
    ("timestamp,price\n1,2\n0,3\n", 3),
    ("timestamp,price\n1,2\n2,-3\n", 3),
    ("timestamp,price\n1,2\n2,abc\n", 3),
    ("timestamp,price\n1,2,3\n", 2),
    ("time,price\n1,2\n", 1),
    ("", 1),
])
def test_price_parse_errors(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(data_io.ParseError) as exc:
        data_io.read_prices(path)
    assert exc.value.line == line


def test_trade_parse_errors(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("timestamp,u_x,u_y,reserve_x,reserve_y\n")
    with pytest.raises(data_io.ParseError):
        data_io.read_trades(path)
    path.write_text("timestamp,u_x,u_y,reserve_x,reserve_y\n1,0,0,1,1\n")
    with pytest.raises(data_io.ParseError) as exc:
        data_io.read_trades(path)
    assert exc.value.line == 2


def test_config_round_trip(tmp_path):
    for cfg in (SimConfig(), headline_config(master_seed=9), nt1_config(horizon=0.25)):
        path = tmp_path / "c.yaml"
        data_io.save_config(path, cfg)
        assert data_io.load_config(path) == cfg
    jpath = tmp_path / "c.json"
    jpath.write_text(json.dumps({"trials": 7, "fees": {"fee_bps": 5}}))
    assert data_io.load_config(jpath).trials == 7


def test_config_parse_error(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("trials: [1,\n")
    with pytest.raises(data_io.ParseError):
        data_io.load_config(path)


def test_trials_round_trip(tmp_path):
    trials = run_trials(headline_config(trials=5))
    path = tmp_path / "trials.csv"
    data_io.write_trials(path, trials)
    assert data_io.read_trials(path) == trials


def test_batch_round_trip(tmp_path):
    stats = run_batch(headline_config(trials=5))
    path = tmp_path / "b.json"
    data_io.write_json(path, stats)
    assert data_io.batch_from_dict(data_io.read_json(path)) == stats


def test_greeks_round_trip(tmp_path):
    rep = greeks_report(headline_config(trials=6))
    path = tmp_path / "g.json"
    data_io.write_json(path, rep)
    assert data_io.greeks_from_dict(data_io.read_json(path)) == rep


def test_samples_round_trip(tmp_path):
    z = np.random.default_rng(0).normal(size=100)
    path = tmp_path / "s.csv"
    data_io.write_samples(path, z)
    assert np.array_equal(data_io.read_samples(path), z)
