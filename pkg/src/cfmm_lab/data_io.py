"""File formats: CSV for series and per-trial rows, YAML/JSON for configs, JSON for reports.

Floats are written with ``repr`` so every file re-parses to the same bits.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .agents import NT1Params, NT2Params
from .calibration import CalibrationResult, TradeRecord
from .config import SimConfig, config_from_dict
from .engine import BatchStats, TrialResult
from .greeks import Estimate, GreeksReport, Sensitivity
from .price_process import SECONDS_PER_DAY, MJDParams, PricePath

PRICE_HEADER = ("timestamp", "price")
TRADE_HEADER = ("timestamp", "u_x", "u_y", "reserve_x", "reserve_y")


class ParseError(ValueError):
    def __init__(self, path, line, message):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


# -- CSV inputs ------------------------------------------------------------------

@dataclass(frozen=True)
class PriceFile:
    timestamps: np.ndarray  # UNIX seconds
    prices: np.ndarray

    def to_path(self) -> PricePath:
        return PricePath(self.timestamps / SECONDS_PER_DAY, self.prices)

    @classmethod
    def from_path(cls, path: PricePath) -> PriceFile:
        return cls(np.asarray(path.times) * SECONDS_PER_DAY, np.asarray(path.prices))


@dataclass(frozen=True)
class TradeFile:
    rows: tuple  # (timestamp_sec, u_x, u_y, reserve_x, reserve_y)

    def to_records(self) -> list[TradeRecord]:
        return [TradeRecord(t / SECONDS_PER_DAY, ux, uy, x, y) for t, ux, uy, x, y in self.rows]

    @classmethod
    def from_records(cls, records) -> TradeFile:
        return cls(tuple((r.timestamp * SECONDS_PER_DAY, r.u_x, r.u_y, r.x, r.y) for r in records))


def _rows(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise ParseError(path, 1, "empty file")
        if tuple(c.strip() for c in first) != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}, got {','.join(first)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                vals = tuple(float(c) for c in row)
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, lineno, "non-finite value")
            yield lineno, vals


def read_prices(path) -> PriceFile:
    ts, ps = [], []
    for lineno, (t, p) in _rows(path, PRICE_HEADER):
        if not p > 0:
            raise ParseError(path, lineno, f"price must be > 0, got {p}")
        if ts and not t > ts[-1]:
            raise ParseError(path, lineno, "timestamps must be strictly increasing")
        ts.append(t)
        ps.append(p)
    if len(ts) < 2:
        raise ParseError(path, 1, "need at least two price rows")
    return PriceFile(np.array(ts), np.array(ps))


def read_trades(path) -> TradeFile:
    rows = []
    for lineno, (t, ux, uy, x, y) in _rows(path, TRADE_HEADER):
        if ux == 0 and uy == 0:
            raise ParseError(path, lineno, "zero fill")
        if not (x > 0 and y > 0):
            raise ParseError(path, lineno, "reserves must be positive")
        rows.append((t, ux, uy, x, y))
    if not rows:
        raise ParseError(path, 1, "no trades")
    return TradeFile(tuple(rows))


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_prices(path, data: PriceFile) -> None:
    _write_csv(path, PRICE_HEADER, zip(data.timestamps.tolist(), data.prices.tolist()))


def write_trades(path, data: TradeFile) -> None:
    _write_csv(path, TRADE_HEADER, data.rows)


# -- per-trial rows and equilibrium output ----------------------------------------

_TRIAL_FIELDS = [f.name for f in fields(TrialResult)]
_INT_TRIAL_FIELDS = {"trial", "n_arb", "n_nt1", "n_nt2", "arrivals_nt1", "arrivals_nt2"}


def write_trials(path, trials: list[TrialResult]) -> None:
    _write_csv(path, _TRIAL_FIELDS, ([getattr(t, k) for k in _TRIAL_FIELDS] for t in trials))


def read_trials(path) -> list[TrialResult]:
    out = []
    for _, vals in _rows(path, tuple(_TRIAL_FIELDS)):
        kw = {k: (int(v) if k in _INT_TRIAL_FIELDS else v) for k, v in zip(_TRIAL_FIELDS, vals)}
        out.append(TrialResult(**kw))
    return out


def write_samples(path, log_ratio) -> None:
    _write_csv(path, ("log_ratio",), ([v] for v in np.asarray(log_ratio, dtype=float).tolist()))


def read_samples(path) -> np.ndarray:
    return np.array([v for _, (v,) in _rows(path, ("log_ratio",))])


def write_density(path, z, pdf) -> None:
    _write_csv(path, ("z", "pdf"), zip(np.asarray(z, float).tolist(), np.asarray(pdf, float).tolist()))


# -- configs ----------------------------------------------------------------------

def load_config(path) -> SimConfig:
    """YAML or JSON (JSON is valid YAML) mapping validated into a SimConfig."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", -1) + 1
        raise ParseError(path, line, f"malformed config: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(path, 1, "config must be a mapping")
    return config_from_dict(data)


def config_to_dict(config: SimConfig) -> dict:
    return config.to_dict()


def save_config(path, config: SimConfig) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True))


# -- JSON reports -----------------------------------------------------------------

def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def batch_from_dict(d: dict) -> BatchStats:
    return BatchStats(**d)


def _mjd_from_dict(d: dict) -> MJDParams:
    return config_from_dict({"mjd": d}).mjd


def calibration_from_dict(d: dict) -> CalibrationResult:
    return CalibrationResult(mjd=_mjd_from_dict(d["mjd"]), nt1=NT1Params(**d["nt1"]),
                             nt2=NT2Params(**d["nt2"]), loglik=d["loglik"],
                             diagnostics=d["diagnostics"])


def greeks_from_dict(d: dict) -> GreeksReport:
    return GreeksReport(
        delta=Estimate(**d["delta"]), unhedged_delta=Estimate(**d["unhedged_delta"]),
        gamma=Estimate(**d["gamma"]), theta_analogue=Estimate(**d["theta_analogue"]),
        sensitivities={k: Sensitivity(**v) for k, v in d["sensitivities"].items()},
        lvr_bps_per_day=d["lvr_bps_per_day"], seed=d["seed"], config_hash=d["config_hash"],
    )
