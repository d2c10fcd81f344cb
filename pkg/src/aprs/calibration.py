"""Empirical constants for the smallness hypotheses and the stability bound.

A run is *bounded* when the monitored a priori quantity stays at or below
``nu_h`` on ``[0, t_cal]`` without blow-up. For each mean-flow magnitude the
largest fluctuation amplitude for which every calibration seed is bounded is
found by bisection; ``c`` comes from the zero-mean threshold and ``C`` is the
most conservative exponential fit across the nonzero magnitudes.
"""

from __future__ import annotations

import logging
import math
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dynamics import BlowUpError, CoupledSolver, InitialDataDescriptor, RunConfig, mean_energy
from .estimates import (
    BOOTSTRAP_FACTOR,
    apriori_monitor_attach,
    fluctuation_pair,
    stability_ratio,
    stability_series,
    _pair_series,
)
from .littlewood_paley import b0_half
from .spectral import Lattice

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmallnessProtocol:
    lattice: Lattice = field(default_factory=lambda: Lattice(16, 16))
    nu_h: float = 0.02
    t_cal: float = 1.0
    dt: float = 0.01
    slope: float = 2.0
    magnitudes: tuple = (0.0, 2.5, 5.0)
    seeds: tuple = tuple(range(20))
    bisect_steps: int = 5
    probe_amplitude: float = 1e-6
    gamma: float = 3.0


class _Exceeded(Exception):
    pass


def _bounded(cfg: RunConfig, ubar0, uth0, limit: float) -> tuple[bool, float]:
    monitor = apriori_monitor_attach(cfg, limit)

    def watch(step, time, state, diag):
        monitor.update(step, time, state, diag)
        if monitor.total > limit:
            raise _Exceeded

    try:
        CoupledSolver(cfg).run(ubar0, uth0, store_states=False, callback=watch, check_invariants=False)
    except (_Exceeded, BlowUpError):
        return False, monitor.total
    return True, monitor.total


class _SeedSet:
    """Unit fluctuations, their smallness norms and growth ratios for one magnitude."""

    def __init__(self, proto: SmallnessProtocol, system: str, eps, magnitude: float):
        self.proto = proto
        self.cfg = RunConfig(lattice=proto.lattice, nu_h=proto.nu_h, gamma=proto.gamma, eps=eps, dt=proto.dt,
                             t_end=proto.t_cal, system=system)
        lat = proto.lattice
        self.data = []
        for s in proto.seeds:
            desc = InitialDataDescriptor(mean_part="random" if magnitude > 0 else "zero", fluct_part="random",
                                         amplitude=1.0, mean_amplitude=magnitude, seed=s, slope=proto.slope)
            ubar, uth = desc.build(lat, self.cfg.k_eff)
            norm = b0_half(fluctuation_pair(uth, lat, eps), lat)
            self.data.append((s, ubar, uth, norm))
        self.pair_min = min(d[3] for d in self.data)
        # growth ratios in the linear regime order the seeds from most to least dangerous
        a = proto.probe_amplitude
        ratios = []
        for s, ubar, uth, norm in self.data:
            _, peak = _bounded(self.cfg, ubar, a * uth, math.inf)
            ratios.append(peak / (a * norm))
        self.ratios = np.array(ratios)
        self.order = list(np.argsort(-self.ratios))

    def all_bounded(self, alpha: float) -> bool:
        for i in self.order:
            _, ubar, uth, _ = self.data[i]
            ok, _ = _bounded(self.cfg, ubar, alpha * uth, self.proto.nu_h)
            if not ok:
                # move the offender to the front for the next trial
                self.order.remove(i)
                self.order.insert(0, i)
                return False
        return True


def threshold_amplitude(seeds: _SeedSet) -> float:
    """Largest fluctuation amplitude (of unit-norm data) for which every seed is bounded."""
    nu = seeds.proto.nu_h
    guess = nu / (float(np.max(seeds.ratios)) * float(np.max([d[3] for d in seeds.data])))
    lo, hi = 0.0, guess
    if seeds.all_bounded(hi):
        lo = hi
        hi = 2.0 * lo
        while seeds.all_bounded(hi):
            lo, hi = hi, 2.0 * hi
    else:
        hi_fail = hi
        lo = 0.5 * hi
        while not seeds.all_bounded(lo):
            hi_fail, lo = lo, 0.5 * lo
            if lo < 1e-12:
                return 0.0
        hi = hi_fail
    for _ in range(seeds.proto.bisect_steps):
        mid = 0.5 * (lo + hi)
        if seeds.all_bounded(mid):
            lo = mid
        else:
            hi = mid
    return lo


def fit_exponential_constant(nu_h: float, thresholds: dict):
    """``min_m m / (nu_h ln(a(0)/a(m)))`` over magnitudes whose threshold decreased; ``"inf"`` if none."""
    a0 = thresholds[0.0]
    fits = [m / (nu_h * math.log(a0 / a)) for m, a in thresholds.items() if m > 0 and 0 < a < a0]
    return min(fits) if fits else "inf"


def calibrate_smallness(system: str = "primitive", eps=None, proto: SmallnessProtocol | None = None,
                        progress=None) -> dict:
    proto = proto or SmallnessProtocol()
    thresholds, amplitudes, ratios = {}, {}, {}
    for m in proto.magnitudes:
        seeds = _SeedSet(proto, system, eps, float(m))
        alpha = threshold_amplitude(seeds)
        # express the threshold in the smallness norm, conservatively across seeds
        thresholds[float(m)] = alpha * seeds.pair_min
        amplitudes[float(m)] = alpha
        ratios[float(m)] = float(np.max(seeds.ratios))
        if progress:
            progress(f"{system} eps={eps} |u_bar|={m}: amplitude*={alpha:.6g} norm*={thresholds[float(m)]:.6g}")
    C = fit_exponential_constant(proto.nu_h, thresholds)
    return {
        "C": C,
        "c": thresholds[0.0] / proto.nu_h,
        "nu_h": proto.nu_h,
        "thresholds": {repr(k): v for k, v in thresholds.items()},
        "amplitudes": {repr(k): v for k, v in amplitudes.items()},
        "linear_growth": {repr(k): v for k, v in ratios.items()},
        "seeds": list(proto.seeds),
        "t_cal": proto.t_cal,
        "dt": proto.dt,
    }


STABILITY_PAIRS = tuple(range(5))
# with a weak mean flow phi only decays and the fitted constant degenerates to zero
STABILITY_MEAN = 5.0


def calibrate_stability(system: str, entry: dict, eps=None, proto: SmallnessProtocol | None = None,
                        mean_amplitude: float = STABILITY_MEAN, scale: float = 1e-3, progress=None) -> dict:
    """Smallest constant making the double-log comparison hold on seeded pairs, times a safety factor."""
    proto = proto or SmallnessProtocol()
    measured = []
    for s in STABILITY_PAIRS:
        cfg = stability_config(system, entry, s, eps=eps, proto=proto, mean_amplitude=mean_amplitude)
        t1, t2 = _pair_series(cfg, scale, s + 500)
        times, phi, f, _ = stability_series(t1, t2)
        measured.append(float(stability_ratio(times, phi, f)))
    C = BOOTSTRAP_FACTOR * max(measured)
    if progress:
        progress(f"stability {system}: measured max {max(measured):.6g}, frozen C={C:.6g}")
    return {"C": C, "measured": measured, "scale": scale, "pairs": list(STABILITY_PAIRS),
            "mean_amplitude": mean_amplitude}


def green_amplitude(entry: dict, bar_norm: float, nu_h: float, fraction: float = 0.5) -> float:
    """A smallness norm that is ``fraction`` of the green threshold for the given mean flow."""
    C = entry["C"]
    factor = 1.0 if C in ("inf", None) else math.exp(bar_norm / (float(C) * nu_h))
    return fraction * float(entry["c"]) * nu_h / factor


def green_data(entry: dict, seed: int, lattice: Lattice, nu_h: float, eps=None, mean_amplitude: float = 1.0,
               slope: float = 2.0, fraction: float = 0.5) -> InitialDataDescriptor:
    """Seeded data whose smallness left-hand side is ``fraction`` of ``c nu_h``."""
    desc = InitialDataDescriptor(mean_part="random" if mean_amplitude > 0 else "zero", fluct_part="random",
                                 amplitude=1.0, mean_amplitude=mean_amplitude, seed=seed, slope=slope)
    ubar, uth = desc.build(lattice)
    bar = math.sqrt(mean_energy(ubar, lattice))
    norm = b0_half(fluctuation_pair(uth, lattice, eps), lattice)
    return InitialDataDescriptor(mean_part=desc.mean_part, fluct_part="random",
                                 amplitude=green_amplitude(entry, bar, nu_h, fraction) / norm,
                                 mean_amplitude=mean_amplitude, seed=seed, slope=slope)


def stability_config(system, entry, seed, eps=None, proto=None, mean_amplitude=STABILITY_MEAN, t_end=None) -> RunConfig:
    proto = proto or SmallnessProtocol()
    data = green_data(entry, seed, proto.lattice, proto.nu_h, eps, mean_amplitude, proto.slope)
    return RunConfig(lattice=proto.lattice, nu_h=proto.nu_h, gamma=proto.gamma, eps=eps, dt=proto.dt,
                     t_end=t_end or proto.t_cal, init=data, system=system)


NS_CALIBRATION_EPS = (0.5, 0.25)


def calibrate_all(inequalities: dict | None = None, ns_eps=NS_CALIBRATION_EPS, proto=None, progress=None) -> dict:
    """Assemble the full frozen-constants document."""
    from .corpus import calibrate_inequalities

    proto = proto or SmallnessProtocol()
    if inequalities is None:
        inequalities = calibrate_inequalities()
    prim = calibrate_smallness("primitive", None, proto, progress)
    ns = {repr(float(e)): calibrate_smallness("ns_aniso", float(e), proto, progress) for e in ns_eps}
    e_ref = float(ns_eps[0])
    stab = {
        "primitive": calibrate_stability("primitive", prim, None, proto, progress=progress),
        "ns_aniso": calibrate_stability("ns_aniso", ns[repr(e_ref)], e_ref, proto, progress=progress),
    }
    return {
        "inequalities": inequalities,
        "smallness": {"primitive": prim, "ns": ns},
        "stability": stab,
        "meta": {"version": __version__, "numpy": np.__version__, "python": platform.python_version(),
                 "lattice": proto.lattice.to_dict()},
    }
