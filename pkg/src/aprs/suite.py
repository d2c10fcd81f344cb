"""The verification suite run by ``aprs verify``: inequality corpus, a priori monitors, stability, Osgood anchor."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import SmallnessProtocol, green_data, stability_config
from .corpus import FRESH_SEEDS, verify_inequality
from .dynamics import RunConfig
from .estimates import SLACK, monitored_run, smallness_entry, stability_experiment
from .osgood import log_closed_form, osgood_integrate

MONITOR_SEEDS = tuple(range(100, 110))
MONITOR_NS_EPS = (0.5, 0.25)
STABILITY_SEEDS = tuple(range(200, 205))
STABILITY_SCALES = (1e-4, 1e-6, 1e-8)


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


def inequality_checks(constants: dict, seeds=FRESH_SEEDS, out_dir: Path | None = None, names=None) -> list:
    outcomes = []
    for name, entry in constants["inequalities"].items():
        if names is not None and name not in names:
            continue
        rows = verify_inequality(name, float(entry["C"]), seeds)
        if out_dir is not None:
            with open(out_dir / f"corpus_{name}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("seed", "q", "lhs", "rhs", "ratio"))
                for r in rows:
                    w.writerow((r.seed, r.q, repr(r.lhs), repr(r.rhs), repr(r.ratio)))
        worst = max((r.ratio for r in rows), default=0.0)
        outcomes.append(CheckOutcome(f"inequality:{name}", all(r.passed for r in rows),
                                     {"C": entry["C"], "max_ratio": worst, "rows": len(rows), "slack": SLACK}))
    return outcomes


def monitor_config(constants: dict, seed: int, system: str = "primitive", eps=None,
                   proto: SmallnessProtocol | None = None, mean_amplitude: float = 1.0) -> RunConfig:
    proto = proto or SmallnessProtocol()
    entry = smallness_entry(constants, eps if system == "ns_aniso" else None)
    data = green_data(entry, seed, proto.lattice, proto.nu_h, eps, mean_amplitude, proto.slope)
    return RunConfig(lattice=proto.lattice, nu_h=proto.nu_h, gamma=proto.gamma, eps=eps, dt=proto.dt, t_end=1.0,
                     init=data, system=system)


def monitor_checks(constants: dict, seeds=MONITOR_SEEDS, ns_eps=MONITOR_NS_EPS) -> list:
    outcomes = []
    families = [("primitive", None)] + [("ns_aniso", e) for e in ns_eps]
    for system, eps in families:
        worst, ok, greens = 0.0, True, True
        for s in seeds:
            cfg = monitor_config(constants, s, system, eps)
            check, monitor, _ = monitored_run(cfg, constants)
            greens &= check.green
            ok &= check.green and not monitor.violated
            worst = max(worst, max(v for _, v in monitor.history) / monitor.bound)
        label = system if eps is None else f"{system}:eps={eps}"
        outcomes.append(CheckOutcome(f"apriori:{label}", ok, {"max_total_over_bound": worst, "all_green": greens}))
    return outcomes


def stability_checks(constants: dict, seeds=STABILITY_SEEDS, scales=STABILITY_SCALES) -> list:
    outcomes = []
    entry = smallness_entry(constants)
    margins, ok = [], True
    for s in seeds:
        cfg = stability_config("primitive", entry, s)
        rec = stability_experiment(cfg, 1e-3, perturb_seed=s + 500, constants=constants)
        ok &= rec.holds
        margins.append(rec.margin)
    outcomes.append(CheckOutcome("stability:osgood", ok, {"min_margin": min(margins)}))
    cfg = stability_config("primitive", entry, seeds[0])
    same = stability_experiment(cfg, 0.0, constants=constants)
    outcomes.append(CheckOutcome("stability:identical", bool(np.all(same.phi == 0.0)), {}))
    finals = [float(stability_experiment(cfg, sc, constants=constants).phi[-1]) for sc in scales]
    outcomes.append(CheckOutcome("stability:scales", all(b < a for a, b in zip(finals, finals[1:])),
                                 {"phi_T": finals}))
    return outcomes


def osgood_anchor(tol: float = 1e-8) -> CheckOutcome:
    a = math.exp(-math.e)
    t = np.linspace(0.0, 3.0, 61)
    bound = osgood_integrate(a, (t, np.ones_like(t)), "log")
    err = float(np.max(np.abs(bound - log_closed_form(a, t))))
    return CheckOutcome("osgood:anchor", err < tol, {"max_error": err})


def run_verification(constants: dict, out_dir=None, seeds=FRESH_SEEDS, quick: bool = False) -> list:
    """All checks; ``quick`` trims seed counts for smoke runs."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if quick:
        seeds = tuple(seeds)[:3]
    outcomes = inequality_checks(constants, seeds, out)
    outcomes += monitor_checks(constants, MONITOR_SEEDS[:2] if quick else MONITOR_SEEDS)
    outcomes += stability_checks(constants, STABILITY_SEEDS[:1] if quick else STABILITY_SEEDS)
    outcomes.append(osgood_anchor())
    if out is not None:
        summary = {
            "passed": all(o.passed for o in outcomes),
            "checks": [{"name": o.name, "passed": o.passed, **o.detail} for o in outcomes],
            "constants": {k: v["C"] for k, v in constants["inequalities"].items()},
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n", encoding="utf-8")
    return outcomes
