"""Command line entry point.

Every flag can also come from the environment as ``HERALDGATE_<FLAG>``
(e.g. ``HERALDGATE_SEED=7``); an explicit flag wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import EXPERIMENTS, FORMATS, ConfigError, RunConfig, bundled_config, load, with_overrides
from .harness import ReportBundle, provenance, run_config
from .imperfections import UnderSamplingError
from .protocol import TruncationError
from .tomography import HeraldStarvation, ZeroHeraldsError

ENV_PREFIX = "HERALDGATE_"
EXIT_OK, EXIT_CONFIG, EXIT_STARVED = 0, 2, 3


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heraldgate",
                                 description="Heralded remote CNOT simulator.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for exp in EXPERIMENTS:
        p = sub.add_parser(exp)
        p.add_argument("--config", help="config file, or 'ideal' / 'paper-nominal'")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--shots", type=int,
                       help="truth-table shots per input, Bell heralds, or budget draws per cell")
        p.add_argument("--analytic", action="store_true", default=None,
                       help="closed-form results, no shot sampling")
        p.add_argument("--format", choices=FORMATS)
        if exp == "sweep":
            p.add_argument("--parameter")
            p.add_argument("--grid", help="comma-separated values")
    return ap


def _resolve(args) -> RunConfig:
    path = args.config or _env("config")
    if path is None:
        rc = RunConfig()
    elif os.path.exists(path):
        rc = load(path)
    else:
        rc = load(bundled_config(path))

    def pick(name, conv=str):
        v = getattr(args, name, None)
        if v is None:
            raw = _env(name)
            if raw is not None:
                try:
                    v = conv(raw)
                except ValueError:
                    raise ConfigError(f"{ENV_PREFIX}{name.upper()}: bad value {raw!r}") from None
        return v

    def flag(raw):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no", ""):
            return False
        raise ValueError(raw)

    shots = pick("shots", int)
    run_kw = {}
    if shots is not None:
        if shots < 1:
            raise ConfigError("--shots must be >= 1")
        key = {"truth-table": "shots", "bell": "heralds", "budget": "draws"}.get(args.experiment)
        if key:
            run_kw[key] = shots
    seed = pick("seed", int)
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise ConfigError("--seed must fit in 64 unsigned bits")
    fmt = pick("format")
    if fmt is not None and fmt not in FORMATS:
        raise ConfigError(f"--format must be one of {FORMATS}")
    rc = with_overrides(rc, experiment=args.experiment, seed=seed, out_dir=pick("out"),
                        fmt=fmt, analytic=pick("analytic", flag), **run_kw)
    if args.experiment == "sweep":
        param = pick("parameter")
        grid = pick("grid")
        if grid is not None:
            try:
                grid = tuple(float(g) for g in grid.split(",") if g.strip())
            except ValueError:
                raise ConfigError(f"--grid: expected comma-separated numbers, got {grid!r}") from None
        rc = with_overrides(rc, sweep_parameter=param, sweep_grid=grid)
        if not rc.sweep_parameter or not rc.sweep_grid:
            raise ConfigError("sweep needs --parameter and --grid (or a sweep section)")
        from .config import resolve_parameter
        resolve_parameter(rc.sweep_parameter)
    return rc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        rc = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        bundle = run_config(rc)
    except (ConfigError, TruncationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HeraldStarvation, ZeroHeraldsError) as exc:
        partial = getattr(exc, "partial", None) or {}
        bundle = ReportBundle(rc.experiment, {"error": str(exc), "partial": partial},
                              provenance=provenance(rc), status="herald-starvation")
        bundle.write(rc.out_dir, "json")
        print(f"herald starvation: {exc}", file=sys.stderr)
        return EXIT_STARVED
    except UnderSamplingError as exc:
        print(f"under-sampled budget: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    files = bundle.write(rc.out_dir, rc.fmt)
    summary = {k: v for k, v in bundle.results.items() if isinstance(v, (int, float, str))}
    print(json.dumps({"experiment": rc.experiment, "out": rc.out_dir,
                      "files": [f.name for f in files], **summary}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
