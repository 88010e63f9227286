"""Simulation configuration and the published parameter sets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

from .agents import ArbParams, NT1Params, NT2Params
from .pool import FeeParams, PoolState
from .price_process import BLOCK_INTERVAL, MJDParams

# Calibrated values for the WETH/USDC v2 pool, Jan-Jun 2021
TABLE_MJD = MJDParams.from_values(sigma_D=0.080128, lambda_J=1.070119, sigma_J=0.013545)
TABLE_RESERVE0 = 1.423880e8  # USDC (numeraire)
TABLE_RESERVE1 = 7.837622e4  # WETH (risky)
TABLE_POOL = PoolState(x=TABLE_RESERVE1, y=TABLE_RESERVE0)
TABLE_NT1 = NT1Params(lambda_delta=955.552632, sigma_delta=0.004034)
TABLE_NT2 = NT2Params(rate_nt=4891.0, size_scale=14096.0)
OBSERVED_TRADES_PER_DAY = 7601.0

ONE_HOUR = 1.0 / 24.0


class ConfigError(ValueError):
    """Raised with every violated invariant listed."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


@dataclass(frozen=True)
class SimConfig:
    mjd: MJDParams = TABLE_MJD
    fees: FeeParams = FeeParams()
    arb: ArbParams | None = ArbParams()
    nt1: NT1Params | None = None
    nt2: NT2Params | None = None
    horizon: float = ONE_HOUR
    trials: int = 1000
    block_interval: float = BLOCK_INTERVAL
    master_seed: int = 0
    initial_pool: PoolState = TABLE_POOL
    # reference price at t=0; None means the initial pool's implied price
    initial_price: float | None = None
    bootstrap_equilibrium: bool = False
    equilibrium_days: float = 2.0
    # None: arbs check every block; otherwise arbs arrive as a Poisson process
    arb_rate: float | None = None

    def __post_init__(self):
        problems = []
        if not self.horizon > 0:
            problems.append(f"horizon must be > 0 (got {self.horizon})")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            problems.append(f"trials must be an integer >= 1 (got {self.trials})")
        if not self.block_interval > 0:
            problems.append(f"block_interval must be > 0 (got {self.block_interval})")
        if self.initial_price is not None and not self.initial_price > 0:
            problems.append(f"initial_price must be > 0 (got {self.initial_price})")
        if not self.equilibrium_days > 0:
            problems.append(f"equilibrium_days must be > 0 (got {self.equilibrium_days})")
        if self.arb_rate is not None and not self.arb_rate > 0:
            problems.append(f"arb_rate must be > 0 (got {self.arb_rate})")
        if problems:
            raise ConfigError(problems)

    @property
    def p0(self) -> float:
        if self.initial_price is not None:
            return self.initial_price
        return self.initial_pool.y / self.initial_pool.x

    @property
    def v0(self) -> float:
        return self.initial_pool.x * self.p0 + self.initial_pool.y

    def with_(self, **changes) -> SimConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def headline_config(**changes) -> SimConfig:
    """NT2 + block arbs at the published calibration, 30bp fee."""
    cfg = SimConfig(nt2=TABLE_NT2, bootstrap_equilibrium=True)
    return cfg.with_(**changes) if changes else cfg


def nt1_config(**changes) -> SimConfig:
    cfg = SimConfig(nt1=TABLE_NT1, bootstrap_equilibrium=True)
    return cfg.with_(**changes) if changes else cfg


def arbs_only_config(**changes) -> SimConfig:
    cfg = SimConfig(fees=FeeParams(1.0))
    return cfg.with_(**changes) if changes else cfg


def _build(cls, data, name, problems):
    if data is None:
        return None
    if not isinstance(data, dict):
        problems.append(f"{name}: expected a mapping")
        return None
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        problems.append(f"{name}: {exc}")
        return None


def config_from_dict(data: dict) -> SimConfig:
    """Build and validate a SimConfig, collecting every violation before raising."""
    problems: list[str] = []
    data = dict(data)
    known = set(SimConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        problems.append(f"unknown keys: {', '.join(unknown)}")
    kwargs = {}
    if "mjd" in data:
        m = data["mjd"] or {}
        if "diffusion" in m or "jumps" in m:
            from .price_process import DiffusionParams, JumpParams
            diff = _build(DiffusionParams, m.get("diffusion", {}), "mjd.diffusion", problems)
            jumps = _build(JumpParams, m.get("jumps", {}), "mjd.jumps", problems)
            if diff is not None and jumps is not None:
                kwargs["mjd"] = MJDParams(diff, jumps)
        else:
            try:
                kwargs["mjd"] = MJDParams.from_values(**m)
            except (TypeError, ValueError) as exc:
                problems.append(f"mjd: {exc}")
    if "fees" in data:
        f = data["fees"]
        if isinstance(f, dict) and "fee_bps" in f:
            try:
                kwargs["fees"] = FeeParams.from_bps(f["fee_bps"])
            except ValueError as exc:
                problems.append(f"fees: {exc}")
        else:
            fee = _build(FeeParams, f, "fees", problems)
            if fee is not None:
                kwargs["fees"] = fee
    for key, cls in (("arb", ArbParams), ("nt1", NT1Params), ("nt2", NT2Params)):
        if key in data:
            kwargs[key] = _build(cls, data[key], key, problems)
    if "initial_pool" in data:
        pool = _build(PoolState, data["initial_pool"], "initial_pool", problems)
        if pool is not None:
            kwargs["initial_pool"] = pool
    for key in known - {"mjd", "fees", "arb", "nt1", "nt2", "initial_pool"}:
        if key in data:
            kwargs[key] = data[key]
    if "trials" in kwargs and isinstance(kwargs["trials"], float) and kwargs["trials"].is_integer():
        kwargs["trials"] = int(kwargs["trials"])
    try:
        cfg = SimConfig(**kwargs)
    except ConfigError as exc:
        problems.extend(exc.problems)
        cfg = None
    if problems:
        raise ConfigError(problems)
    return cfg
