"""Command-line entry point ``aprs``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigFileError, ParsedConfig, apply_overrides, build_config, parse_config, read_values
from .convergence import run_sweep
from .dynamics import BlowUpError, ConfigError, CoupledSolver, mean_energy
from .estimates import (
    MonitorEvent,
    SmallnessRefused,
    UncalibratedError,
    apriori_bound,
    apriori_monitor_attach,
    check_smallness,
    constants_path,
    load_constants,
    save_constants,
)
from .littlewood_paley import block_norms, norm_report_from_blocks
from .spectral import read_snapshot, write_snapshot

log = logging.getLogger("aprs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_VERIFY = 4
EXIT_UNCALIBRATED = 5

SUBCOMMANDS = ("simulate-primitive", "simulate-ns", "sweep-eps", "verify", "norms", "calibrate")


def versions() -> dict:
    return {"aprs": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out: Path, subcommand: str, parsed: ParsedConfig | None, seed, extra=None) -> Path:
    data = {"subcommand": subcommand, "seed": seed, "versions": versions()}
    if parsed is not None:
        data["config_hash"] = parsed.config_hash
        data["config"] = parsed.canonical_text()
    data.update(extra or {})
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_run_config(args, force_system=None) -> ParsedConfig:
    overrides = list(args.overrides or [])
    if args.seed is not None:
        overrides += [f"run.seed={args.seed}", f"init.seed={args.seed}"]
    if force_system:
        overrides.append(f"run.system={force_system}")
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        values, lines = read_values(manifest["config"], str(args.manifest))
        return build_config(apply_overrides(values, overrides), lines, str(args.manifest))
    if not args.config:
        raise ConfigFileError("a --config file (or --manifest) is required")
    return parse_config(args.config, overrides)


def _snapshot(out: Path, index: int, system: str, lattice, ubar, fl):
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    kind = "velocity_primitive" if system == "primitive" else "velocity_ns"
    write_snapshot(snaps / f"mean_{index:06d}.bin", lattice, list(ubar), "mean_flow")
    write_snapshot(snaps / f"fluct_{index:06d}.bin", lattice, list(fl), kind)


def cmd_simulate(args, system: str) -> int:
    parsed = _load_run_config(args, system)
    cfg = parsed.run
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, args.subcommand, parsed, cfg.seed)
    monitor = None
    try:
        constants = load_constants()
        eps = cfg.eps if system == "ns_aniso" else None
        check = check_smallness(cfg.init, cfg.lattice, cfg.nu_h, eps, constants)
        log.info("smallness %s: lhs=%.6g, c nu_h=%.6g", check.verdict, check.lhs, check.c_cal * cfg.nu_h)
        monitor = apriori_monitor_attach(cfg, apriori_bound(check))
        if not check.green:
            log.warning("smallness red: the a priori bound is not guaranteed, monitor events are informational")
            monitor.events.append(MonitorEvent(0, 0.0, check.lhs, check.c_cal * cfg.nu_h,
                                               {"smallness": check.verdict}))
    except UncalibratedError as exc:
        log.warning("%s; running without the a priori monitor", exc)

    snap_every = parsed.snapshot_every
    counter = {"i": 0}

    def callback(step, time, state, diag):
        if monitor is not None:
            monitor.update(step, time, state, diag)
        if snap_every and counter["i"] % snap_every == 0:
            _snapshot(out, step, system, cfg.lattice, state[0], state[1])
        counter["i"] += 1

    code = EXIT_OK
    try:
        traj = CoupledSolver(cfg).run(store_states=False, callback=callback)
    except BlowUpError as exc:
        log.error("%s", exc)
        traj = exc.trajectory
        code = EXIT_BLOWUP
    if traj is not None:
        from .dynamics import StepDiagnostics

        _write_csv(out / "diagnostics.csv", StepDiagnostics.CSV_HEADER, [d.csv_row() for d in traj.diagnostics])
        final = getattr(traj, "final_state", None)
        if final is not None:
            _snapshot(out, traj.steps, system, cfg.lattice, final[0], final[1])
    if monitor is not None:
        _write_csv(out / "monitor.csv", ("time", "total", "bound"),
                   [(repr(t), repr(v), repr(monitor.bound)) for t, v in monitor.history])
        _write_csv(out / "monitor_events.csv", ("step", "time", "total", "bound", "terms"),
                   [(e.step, repr(e.time), repr(e.total), repr(e.bound), json.dumps(e.terms)) for e in monitor.events])
        if monitor.events:
            log.warning("%d a priori monitor events logged", len(monitor.events))
    return code


def cmd_sweep(args) -> int:
    parsed = _load_run_config(args)
    if parsed.sweep is None:
        raise ConfigFileError("sweep-eps needs a [sweep] section", None, str(args.config or args.manifest))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, args.subcommand, parsed, parsed.run.seed)
    report = run_sweep(parsed.sweep, parsed.run,
                       on_member=lambda m: log.info("eps=%g d_weak=%.6g", m.eps, m.d_weak))
    report.write_csv(out / "convergence.csv")
    report.write_plot_data(out / "plot")
    members = [dict(vars(m), inequality_holds=m.inequality_holds) for m in report.members]
    (out / "members.json").write_text(json.dumps({"members": members, "fitted_orders": report.fitted_orders,
                                                  "partial": report.partial}, indent=2) + "\n", encoding="utf-8")
    return EXIT_BLOWUP if report.partial else EXIT_OK


def cmd_verify(args) -> int:
    from .suite import run_verification

    constants = load_constants()
    out = Path(args.output_dir)
    outcomes = run_verification(constants, out, quick=args.quick)
    write_manifest(out, "verify", None, None, {"constants_path": str(constants_path())})
    for o in outcomes:
        print(f"{'PASS' if o.passed else 'FAIL'} {o.name} {json.dumps(o.detail, default=float)}")
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_VERIFY


def field_norms(coeffs, lattice) -> dict:
    rep = norm_report_from_blocks(block_norms(coeffs, lattice))
    l2 = float(np.sqrt(lattice.measure * np.sum(np.abs(coeffs) ** 2)))
    return {"l2": l2, "b0_half": rep.b0_half, "h0_half": rep.h0_half, "h0_minus_half": rep.h0_s[-0.5],
            "per_block": rep.per_block}


def cmd_norms(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.snapshot:
        lattice, kind, arrays = read_snapshot(args.snapshot)
        if kind == "mean_flow":
            stacked = np.stack(arrays)
            report = {"kind": kind, "l2": float(np.sqrt(mean_energy(stacked, lattice)))}
        else:
            stacked = np.stack(arrays) if len(arrays) > 1 else arrays[0]
            report = {"kind": kind, **field_norms(stacked, lattice)}
        write_manifest(out, "norms", None, None, {"snapshot": str(args.snapshot)})
    else:
        parsed = _load_run_config(args)
        cfg = parsed.run
        ubar, uth = cfg.init.build(cfg.lattice, cfg.k_eff)
        report = {"kind": "initial_data", "fluct": field_norms(uth, cfg.lattice),
                  "mean_l2": float(np.sqrt(mean_energy(ubar, cfg.lattice)))}
        write_manifest(out, "norms", parsed, cfg.seed)
    text = json.dumps(report, indent=2)
    (out / "norms.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import SmallnessProtocol, calibrate_all
    from .corpus import CALIBRATION_SEEDS, PROBE_SEEDS, calibrate_inequalities

    if args.quick:
        proto = SmallnessProtocol(seeds=tuple(range(4)), bisect_steps=3)
        ineq = calibrate_inequalities(CALIBRATION_SEEDS[:10], probe_seeds=PROBE_SEEDS[:3])
    else:
        proto = SmallnessProtocol()
        ineq = None
    constants = calibrate_all(ineq, proto=proto, progress=lambda s: log.info("%s", s))
    path = save_constants(constants, args.constants_out)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "calibrate", None, None, {"constants_path": str(path), "quick": args.quick})
    print(f"constants written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aprs", description=__doc__)
    p.add_argument("--version", action="version", version=f"aprs {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", help="key=value experiment file")
        s.add_argument("--output-dir", "-o", default=None, help="directory for artifacts (default runs/<subcommand>)")
        s.add_argument("--seed", type=int, default=None, help="overrides run.seed and init.seed")
        s.add_argument("--manifest", help="re-execute the configuration recorded in a manifest")
        s.add_argument("--verbose", "-v", action="store_true")
        s.add_argument("overrides", nargs="*", help="key=value or section.key=value overrides")
        if name == "norms":
            s.add_argument("--snapshot", help="report norms of a snapshot file instead of initial data")
        if name in ("verify", "calibrate"):
            s.add_argument("--quick", action="store_true", help="reduced seed counts for smoke runs")
        if name == "calibrate":
            s.add_argument("--constants-out", default=None, help="where to write constants (default: active path)")
    return p


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    if args.output_dir is None:
        args.output_dir = str(Path("runs") / args.subcommand)
    try:
        if args.subcommand == "simulate-primitive":
            return cmd_simulate(args, "primitive")
        if args.subcommand == "simulate-ns":
            return cmd_simulate(args, "ns_aniso")
        if args.subcommand == "sweep-eps":
            return cmd_sweep(args)
        if args.subcommand == "verify":
            return cmd_verify(args)
        if args.subcommand == "norms":
            return cmd_norms(args)
        return cmd_calibrate(args)
    except (ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UncalibratedError as exc:
        print(f"uncalibrated: {exc}", file=sys.stderr)
        return EXIT_UNCALIBRATED
    except SmallnessRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
