"""Command line: synth -> featurize -> experiment -> report, all inside one --out directory."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datafiles
from .experiment import LEDGER_FILE, ConfigError, enumerate_grid, load_config, read_ledger, run_experiment
from .pipeline import build_samples, read_samples, write_exclusions, write_samples

SAMPLES_FILE = "samples.csv"
EXCLUSIONS_FILE = "exclusions.csv"

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("agitrisk")


class UsageError(Exception):
    """Bad input or environment; maps to exit code 2."""


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _config(args):
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return load_config(args.config, desk_scale=args.desk_scale, seed=args.seed,
                       am_pm=getattr(args, "am_pm", False))


def cmd_synth(args) -> int:
    from .synth import generate_dataset

    config = _config(args)
    out = _writable_dir(Path(args.out))
    ds = generate_dataset(config.cohort_spec)
    datafiles.write_dataset(ds, out, config.data_hash())
    labels = [a.label for a in ds.alerts]
    n = len(labels)
    mix = {name: sum(1 for x in labels if x == v) for name, v in (("true", 1), ("false", 0), ("not_validated", None))}
    print(f"participants: {len(ds.participants)}")
    print(f"alerts: {n} (" + ", ".join(f"{k} {v} = {100 * v / max(n, 1):.2f}%" for k, v in mix.items()) + ")")
    print(f"data_hash: {config.data_hash()}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    config = _config(args)
    out = _writable_dir(Path(args.out))
    meta = out / datafiles.META_FILE
    if not meta.exists() or not (out / datafiles.ALERTS_FILE).exists():
        raise UsageError(f"no dataset in {out}; run `agitrisk synth --out {out}` first")
    data_hash = datafiles.read_header(meta, "data_hash")
    if data_hash != config.data_hash():
        raise UsageError(
            f"dataset in {out} has data_hash={data_hash} but the configuration gives {config.data_hash()}; "
            "pass the same --config/--seed used for synth"
        )
    _, events, vitals, alerts = datafiles.load_streams(out)
    if not alerts:
        log.warning("alert log is empty; writing an empty sample file")
    samples, exclusions, retained = build_samples(events, vitals, alerts, config.vital_ranges)
    headers = {"data_hash": data_hash}
    write_samples(samples, out / SAMPLES_FILE, headers)
    write_exclusions(exclusions, out / EXCLUSIONS_FILE, headers)
    y = np.array([s.label for s in samples], dtype=int)
    print(f"alerts: {len(alerts)} read, {len(retained)} retained")
    print(f"samples: {len(samples)} (agitation {int(y.sum())}, no agitation {int((y == 0).sum())})")
    print(f"coverage exclusions: {len(exclusions)}")
    return EXIT_OK


def _write_report(ledger_paths: list[Path], out: Path) -> int:
    from .report import aggregate_report, write_report

    results, hashes, warnings = [], set(), []
    for path in ledger_paths:
        if not path.exists():
            raise UsageError(f"run log not found: {path}")
        try:
            contents = read_ledger(path)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        results += contents.results
        hashes |= contents.config_hashes
        if "config_hash" in contents.meta:
            hashes.add(contents.meta["config_hash"])
        warnings += contents.warnings
    if len(hashes) > 1:
        raise UsageError(f"refusing to merge run logs with different config hashes: {sorted(hashes)}")
    if not results:
        raise UsageError("run log has no usable rows")
    for w in warnings:
        log.warning(w)
    try:
        rep = aggregate_report(results, hashes.pop(), warnings)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    written = write_report(rep, out)
    print(f"report: {len(results)} results, {rep.n_degenerate} degenerate, {len(warnings)} warnings")
    for path in written:
        print(f"  {path}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _config(args)
    try:
        enumerate_grid(config.grid)
    except ConfigError as exc:
        raise UsageError(f"invalid grid: {exc}") from exc
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = _writable_dir(Path(args.out))
    path = out / SAMPLES_FILE
    if not path.exists():
        raise UsageError(f"{path} not found; run `agitrisk featurize --out {out}` first")
    data_hash = datafiles.read_header(path, "data_hash")
    if data_hash != config.data_hash():
        raise UsageError(f"{path} has data_hash={data_hash}, configuration gives {config.data_hash()}")
    samples = read_samples(path)
    if not samples:
        raise UsageError(f"{path} holds no samples")
    run_experiment(samples, config, out, n_jobs=args.jobs)
    return _write_report([out / LEDGER_FILE], out)


def cmd_report(args) -> int:
    out = Path(args.out)
    ledgers = [Path(p) for p in args.ledger] if args.ledger else [out / LEDGER_FILE]
    return _write_report(ledgers, _writable_dir(out))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--out", default="agitrisk-out", help="working/output directory")
    common.add_argument("--seed", type=int, help="override the cohort seed")
    common.add_argument("--desk-scale", action="store_true", help="reduced grid and 3 repetitions")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="agitrisk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic cohort").set_defaults(func=cmd_synth)
    sub.add_parser("featurize", parents=[common], help="build 6x24 samples").set_defaults(func=cmd_featurize)
    p = sub.add_parser("experiment", parents=[common], help="grid search, RF baseline and report")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--am-pm", action="store_true", help="add the AM/PM comparison")
    p.set_defaults(func=cmd_experiment)
    p = sub.add_parser("report", parents=[common], help="rebuild the report from run logs")
    p.add_argument("--ledger", action="append", help="run log to read (repeatable); default <out>/run_log.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"agitrisk {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"agitrisk {args.command}: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
