"""Command line: ``audsim {run,sweep,calibrate,diagnose,presets}``.

Every ExperimentConfig field is available as ``--<field>`` (underscores or
dashes). Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import diagnostics
from .config import (CONFIG_FIELDS, ConfigError, ExperimentConfig, Fusion, Stopping,
                     SweepSpec, config_from_dict, load_spec, validate)
from .harness import (RESULT_COLUMNS, calibrate_epsilon, experiment_pilot_book,
                      record_row, run_experiment, run_sweep, write_manifest)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

_INT = {"users_per_channel_base", "num_channels", "num_copies", "num_antennas",
        "pilot_length", "num_trials", "master_seed", "calibration_trials", "max_iters"}
_FLOAT = {"activation_prob", "snr_db", "epsilon"}


def _optional(kind):
    def parse(text):
        return None if text.lower() in ("none", "null", "") else kind(text)
    return parse


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment parameters")
    for name in CONFIG_FIELDS:
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        if name in _INT:
            kind = _optional(int) if name == "max_iters" else int
        elif name in _FLOAT:
            kind = _optional(float) if name == "epsilon" else float
        else:
            kind = str
        kw = {}
        if name == "stopping":
            kw["choices"] = [s.value for s in Stopping]
        elif name == "fusion":
            kw["choices"] = [f.value for f in Fusion]
        g.add_argument(*flags, dest=name, type=kind, default=argparse.SUPPRESS, **kw)
    g.add_argument("--seed", dest="master_seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--trials", dest="num_trials", type=int, default=argparse.SUPPRESS)


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in CONFIG_FIELDS if hasattr(args, k)}


def preset_path(name: str) -> Path:
    path = resources.files("audsim") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError([], f"unknown preset {name!r}")
    return Path(str(path))


def list_presets() -> list[str]:
    folder = resources.files("audsim") / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def _spec_from_args(args) -> SweepSpec:
    source = getattr(args, "spec", None)
    if getattr(args, "preset", None):
        source = preset_path(args.preset)
    elif getattr(args, "config", None):
        source = args.config
    if source is not None:
        return load_spec(source, _overrides(args))
    return SweepSpec(config_from_dict(_overrides(args)))


def _grid(text):
    if text is None:
        return None
    return tuple(float(x) for x in text.split(",") if x.strip())


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    if spec.axes:
        raise ConfigError([], "run takes a single configuration; use 'sweep' for axes")
    cfg = validate(spec.base)
    rec = run_experiment(cfg, _grid(args.grid) or spec.epsilon_grid, args.workers)
    print(f"mean balanced inaccuracy {rec.mean:.6g} +- {rec.stderr:.2g} "
          f"({rec.trials} trials, epsilon={rec.epsilon})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{args.name}.csv", "w", encoding="utf-8", newline="") as fh:
            import csv
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            w.writerow(record_row(rec))
        write_manifest(out / f"{args.name}.manifest.json", spec, [rec], args.workers)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    name = args.name or (args.preset or Path(args.spec).stem if (args.preset or args.spec)
                         else "sweep")
    records = run_sweep(spec, args.out, args.workers, name)
    for r in records:
        print(f"cell {r.index} {r.varied} eps={r.epsilon} mean={r.mean:.6g} se={r.stderr:.2g}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    spec = _spec_from_args(args)
    cfg = validate(replace(spec.base, stopping=Stopping.RESIDUAL, epsilon=None))
    cal = calibrate_epsilon(cfg, experiment_pilot_book(cfg), _grid(args.grid) or spec.epsilon_grid,
                            args.calibration_trials_override, args.workers)
    for row in cal.table():
        print(f"{row['epsilon']:12.6g} {row['mean_inaccuracy']:.6g} {row['stderr']:.2g}")
    print(f"best epsilon {cal.best_epsilon:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"config": cfg.as_dict(), "best_epsilon": cal.best_epsilon,
               "trials": cal.trials, "grid": cal.table()}
        (out / f"{args.name}.calibration.json").write_text(json.dumps(doc, indent=2) + "\n",
                                                            encoding="utf-8")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    report = diagnostics.toy_report(args.toy_pilot_length, args.toy_columns, args.toy_k,
                                    args.toy_snr_db, args.toy_antennas, args.toy_seed)
    spec = _spec_from_args(args)
    cfg = validate(spec.base)
    report["expected_active_per_channel"] = diagnostics.expected_sparsity_check(
        cfg.activation_prob, cfg.users_per_channel_base, cfg.num_copies)
    report["empirical"] = diagnostics.empirical_channel_stats(cfg, args.toy_trials)
    text = json.dumps({"diagnostics": report}, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.name}.diagnostics.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="experiment file (YAML)")
        p.add_argument("--workers", type=int, default=1)
        if out:
            p.add_argument("--out", help="output directory")
            p.add_argument("--name", default=None)
        _add_config_flags(p)

    p = sub.add_parser("run", help="one configuration")
    common(p)
    p.add_argument("--grid", help="comma-separated epsilon grid for calibration")
    p.set_defaults(func=cmd_run, default_name="run")

    p = sub.add_parser("sweep", help="a sweep file or preset")
    p.add_argument("spec", nargs="?", help="sweep file (YAML)")
    p.add_argument("--preset", help="bundled preset name (see 'presets')")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="epsilon grid search")
    common(p)
    p.add_argument("--grid", help="comma-separated epsilon grid")
    p.add_argument("--grid-trials", dest="calibration_trials_override", type=int, default=None)
    p.set_defaults(func=cmd_calibrate, default_name="calibrate")

    p = sub.add_parser("diagnose", help="isometry constants, MAR and SNR on toy instances")
    common(p)
    p.add_argument("--toy-pilot-length", type=int, default=8)
    p.add_argument("--toy-columns", type=int, default=12)
    p.add_argument("--toy-k", type=int, default=1)
    p.add_argument("--toy-snr-db", type=float, default=20.0)
    p.add_argument("--toy-antennas", type=int, default=1)
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--toy-trials", type=int, default=2000)
    p.set_defaults(func=cmd_diagnose, default_name="diagnose")

    p = sub.add_parser("presets", help="list bundled presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "name") and args.name is None and hasattr(args, "default_name"):
        args.name = args.default_name
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
