"""Command line: calibrate, simulate, greeks, equilibrium.

Exit codes: 0 success, 1 invalid input or config, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .calibration import CalibrationError, calibrate
from .config import ConfigError, SimConfig, headline_config
from .engine import equilibrium_samples, run_trials, summarize
from .equilibrium import (INSTANTANEOUS, POISSON, analytic_equilibrium_density, ks_distance,
                          simulate_arb_equilibrium)
from .greeks import GreeksError, greeks_report, pnl_decomposition
from .price_process import log_return_variance

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cfmm_lab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _load(args) -> SimConfig:
    cfg = data_io.load_config(args.config) if args.config else headline_config()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "horizon_days", None) is not None:
        changes["horizon"] = args.horizon_days
    return cfg.with_(**changes) if changes else cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(args) -> int:
    prices = data_io.read_prices(args.prices)
    trades = data_io.read_trades(args.trades)
    rate_cfg = _load(args) if args.config else None
    seed = 0 if args.seed is None else args.seed
    result = calibrate(prices.to_path(), trades.to_records(), rate_config=rate_cfg, seed=seed)
    out = _out_dir(args.out) / "calibration.json"
    data_io.write_json(out, result)
    print(f"sigma_D={result.mjd.sigma_D:.6g} lambda_J={result.mjd.lambda_J:.6g} "
          f"sigma_J={result.mjd.sigma_J:.6g} sigma_delta={result.nt1.sigma_delta:.6g} "
          f"lambda_delta={result.nt1.lambda_delta:.6g} -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    trials = run_trials(cfg, args.threads)
    stats = summarize(cfg, trials)  # stderr is NaN for a single trial
    out = _out_dir(args.out)
    data_io.write_json(out / "batch.json", stats)
    data_io.write_trials(out / "trials.csv", trials)
    print(f"mean {stats.mean_pnl_bps_per_day:.4f} +/- {stats.stderr:.4f} bps/day over "
          f"{stats.trials} trials (seed {stats.seed}, config {stats.config_hash}) -> {out}")
    return EXIT_OK


def cmd_greeks(args) -> int:
    cfg = _load(args)
    report = greeks_report(cfg, args.threads)
    decomp = pnl_decomposition(cfg, threads=args.threads)
    out = _out_dir(args.out)
    data_io.write_json(out / "greeks.json", report)
    data_io.write_json(out / "decomposition.json", decomp)
    print(f"gamma {report.gamma.value:.4f} +/- {report.gamma.stderr:.4f}, "
          f"delta {report.delta.value:.3g} +/- {report.delta.stderr:.3g} -> {out}")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    cfg = _load(args)
    out = _out_dir(args.out)
    n = args.samples
    w = cfg.fees.log_halfwidth
    density = None
    if args.mode == "engine":
        ticks_per_day = 1.0 / cfg.block_interval
        days = max(cfg.equilibrium_days, 1.2 * n / ticks_per_day)
        z = equilibrium_samples(cfg, days).log_ratio
        if z.size < n:
            raise RuntimeError(f"engine run produced {z.size} < {n} samples")
        z = z[:n]
    else:
        rate = args.arb_rate if args.arb_rate is not None else cfg.arb_rate
        sample = simulate_arb_equilibrium(cfg.mjd, cfg.fees, n, mode=args.mode, rate=rate,
                                          seed=cfg.master_seed)
        z = sample.log_ratio
        sigma = np.sqrt(log_return_variance(cfg.mjd, 1.0))
        density = analytic_equilibrium_density(args.mode, w, rate=rate, sigma=sigma)
    data_io.write_samples(out / "samples.csv", z)
    msg = f"{z.size} samples"
    if density is not None:
        lo = -w - (8.0 / density.decay if np.isfinite(density.decay) else 0.5 * w)
        grid = np.linspace(lo, -lo, 801)
        data_io.write_density(out / "density.csv", grid, density.pdf(grid))
        ks = ks_distance(z, density)
        data_io.write_json(out / "equilibrium.json",
                           {"mode": args.mode, "samples": int(z.size), "halfwidth": w,
                            "decay": density.decay if np.isfinite(density.decay) else None,
                            "ks": ks, "seed": cfg.master_seed, "config_hash": cfg.digest()})
        msg += f", KS {ks:.4f} vs analytic"
    print(f"{msg} -> {out}")
    return EXIT_OK


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="YAML/JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--threads", type=int,
                   help="worker processes (default: $CFMM_LAB_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cfmm-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="fit price and trader models from CSV data")
    _common(p)
    p.add_argument("--prices", required=True, help="CSV timestamp,price")
    p.add_argument("--trades", required=True, help="CSV timestamp,u_x,u_y,reserve_x,reserve_y")
    p.set_defaults(func=cmd_calibrate)

    for name, func, help_ in (("simulate", cmd_simulate, "run a Monte Carlo batch"),
                              ("greeks", cmd_greeks, "gamma, delta, theta and sensitivities")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon-days", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("equilibrium", help="stationary log(p_hat/p) samples and density")
    _common(p)
    p.add_argument("--mode", choices=(INSTANTANEOUS, POISSON, "engine"), default=INSTANTANEOUS)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--arb-rate", type=float, help="arb arrivals per day for poisson mode")
    p.set_defaults(func=cmd_equilibrium)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, data_io.ParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CalibrationError, GreeksError, RuntimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
