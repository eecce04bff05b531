"""``cqec`` command line: ``run``, ``sweep`` and ``validate``.

Exit codes: 0 success, 2 validation or configuration failure, 3 abort-rate failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .ensemble import (
    AbortRateError,
    ConfigError,
    RunConfig,
    emit_outputs,
    run_ensemble,
    sweep,
    write_sweep_csv,
)
from .validation import run_invariant_suite

EXIT_OK, EXIT_INVALID, EXIT_ABORTS = 0, 2, 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON config file (a run manifest also works)")
    p.add_argument("--preset", choices=("desk", "fine"), help="start from a named preset")
    for f in dataclasses.fields(RunConfig):
        key = RunConfig._key(f.name)
        flag = "--" + key.replace("_", "-")
        hint = "comma-separated list" if f.type == "list" else f.type
        p.add_argument(flag, dest=f"opt_{f.name}", default=None, metavar=key.upper(), help=f"{key} ({hint})")


def _config_from_args(args) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.from_file(args.config)
    elif args.preset is not None:
        cfg = RunConfig.preset(args.preset)
    else:
        cfg = RunConfig()
    doc = cfg.to_dict()
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f"opt_{f.name}")
        if value is not None:
            doc[RunConfig._key(f.name)] = value.split(",") if f.type == "list" else value
    return RunConfig.from_dict(doc)


def _print_summary(res) -> None:
    tau = "none" if res.tau is None else f"{res.tau:.5f} +- {res.tau_sem:.5f}"
    print(f"trajectories: {res.n_used} used, {res.n_aborted} aborted")
    print(f"crossing time tau (gamma units): {tau}")
    print(f"final F_cw = {res.f_cw_mean[-1]:.6f} +- {res.f_cw_sem[-1]:.6f}, "
          f"F_corr = {res.f_corr_mean[-1]:.6f} +- {res.f_corr_sem[-1]:.6f}")


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    try:
        res = run_ensemble(cfg)
        status = EXIT_OK
    except AbortRateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        res, status = exc.result, EXIT_ABORTS
    paths = emit_outputs(res, cfg)
    _print_summary(res)
    for kind, path in paths.items():
        print(f"wrote {kind}: {path}")
    return status


def _cmd_sweep(args) -> int:
    cfg = _config_from_args(args)

    def progress(row):
        print(",".join(row.as_row()), flush=True)

    rows = sweep(cfg, progress=progress)
    path = write_sweep_csv(rows, Path(cfg.output_dir) / f"{cfg.output_stem}_sweep.csv")
    print(f"wrote sweep: {path}")
    return EXIT_ABORTS if any(r.status != "ok" for r in rows) else EXIT_OK


def _cmd_validate(args) -> int:
    ok = True
    if args.config is not None:
        cfg = RunConfig.from_file(args.config)
        print(f"PASS  config {args.config}: {cfg.steps} steps, {cfg.n_traj} trajectories")
    for check in run_invariant_suite():
        print(check.line())
        ok &= check.passed
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqec", description="Continuous error correction trajectory ensembles.")
    parser.add_argument("--version", action="version", version=f"cqec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("run", _cmd_run, "simulate one ensemble and write CSV, manifest and plot script"),
                           ("sweep", _cmd_sweep, "scan kappa/gamma and lambda/gamma grids")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("validate", help="run the invariant suite")
    p.add_argument("--config", type=Path, help="also check this config file")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
