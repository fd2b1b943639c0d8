"""Command-line entry point.

Exit status: 0 on success, 2 for configuration errors (unknown device or
preset, bad units, unwritable output), 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, runner
from .config import KINDS, ConfigError, ExperimentConfig
from .registry import ENV_VAR, registry_list

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# flags that map straight onto experiment parameters
_PARAM_FLAGS = ("detuning", "t1", "t2_star", "coupling", "psd")


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _config_from_args(args, kind: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if kind != cfg.kind and kind is not None:
            raise ConfigError(f"config describes {cfg.kind!r}, not {kind!r}")
    else:
        cfg = ExperimentConfig(kind, args.device or "device1", 0 if args.seed is None else args.seed)
    if args.device:
        cfg.device = args.device
    if args.seed is not None:
        cfg.seed = args.seed
    params = dict(cfg.params)
    for name in _PARAM_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    params.update(_parse_set(args.set))
    cfg.params = params
    if args.out:
        cfg.output = args.out
    return cfg


def _print_record(record: runner.ResultRecord, out_dir: str):
    print(f"# {record.kind} on {record.device} seed={record.seed}")
    print(f"config_hash\t{record.config_hash}")
    print(f"data_hash\t{record.data_hash}")
    for key, value in record.fit.items():
        if isinstance(value, (int, float, str)):
            print(f"{key}\t{value}")
    print(f"data\t{Path(out_dir) / record.data_path}")
    for fig in record.figures:
        print(f"figure\t{Path(out_dir) / fig}")


def cmd_run(args) -> int:
    cfg = _config_from_args(args, args.kind)
    record = runner.run(cfg, args.registry, plot=args.plot)
    _print_record(record, cfg.output)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args, "sweep")
    params = dict(cfg.params)
    if args.start or args.stop:
        params["values"] = {"start": args.start or "4 GHz", "stop": args.stop or "8 GHz",
                            "num": args.num}
    if args.no_mask:
        params["mask"] = False
    cfg.params = params
    record = runner.run(cfg, args.registry, workers=args.workers, plot=args.plot)
    _print_record(record, cfg.output)
    return 0


def cmd_registry(args) -> int:
    devices = registry_list(args.registry)
    if args.json:
        print(json.dumps(devices, indent=2))
        return 0
    for dev in devices:
        print(f"[{dev['name']}] {dev['label']}")
        for key, value in dev.items():
            if key not in ("name", "label"):
                print(f"  {key:24s} {value}")
    return 0


_FITTERS = {
    "exp": analysis.fit_exp_decay,
    "sinusoid": analysis.fit_damped_sinusoid,
    "lorentzian": analysis.fit_lorentzian,
    "parabola": analysis.fit_parabola_spectrum,
}


def cmd_analyze(args) -> int:
    try:
        data = np.genfromtxt(args.file, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.file}: {exc}") from None
    names = data.dtype.names or ()
    x_col = args.x or names[0]
    y_col = args.y or names[1]
    if x_col not in names or y_col not in names:
        raise ConfigError(f"columns {x_col!r}/{y_col!r} not in {names}")
    fit = _FITTERS[args.model](data[x_col], data[y_col])
    print(fit.to_json(indent=2))
    if not fit.converged or fit.flags:
        return EXIT_NUMERIC
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpbvlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--registry", default=None,
                   help=f"extra device registry JSON (default: ${ENV_VAR})")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--device")
        sp.add_argument("--seed", type=int, help="master seed (default 0)")
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="experiment parameter, e.g. --set n_shots=800")
        sp.add_argument("--plot", action="store_true", help="also render PNG figures")

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("kind", choices=[k for k in KINDS if k != "sweep"])
    common(r)
    for name in _PARAM_FLAGS:
        r.add_argument("--" + name.replace("_", "-"), dest=name)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="T1 and decoupling versus Josephson energy")
    common(s)
    s.add_argument("--start")
    s.add_argument("--stop")
    s.add_argument("--num", type=int, default=9)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-mask", action="store_true", help="ignore the visibility mask")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("registry", help="list devices")
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_registry)

    a = sub.add_parser("analyze", help="fit a CSV table")
    a.add_argument("file")
    a.add_argument("--model", choices=sorted(_FITTERS), default="exp")
    a.add_argument("--x")
    a.add_argument("--y")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (runner.NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
