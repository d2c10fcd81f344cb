"""Smallness verdicts, a priori monitors, convection-lemma checks and the two-solution stability experiment."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import (
    CoupledSolver,
    InitialDataDescriptor,
    RunConfig,
    cumulative_trapezoid,
    mean_energy,
    vertical_velocity_coeffs,
)
from .littlewood_paley import TimeNormAccumulator, b0_half, block_norms, make_partition, sobolev_norm
from .osgood import modulus, osgood_integrate
from .seeding import STREAM_PERTURB, generator, random_fluctuation
from .spectral import Lattice, SpectralField, VelocityState, pad_coeffs

log = logging.getLogger(__name__)

CONSTANTS_ENV = "APRS_CONSTANTS"
BOOTSTRAP_FACTOR = 2.0
SLACK = 1.05


class UncalibratedError(RuntimeError):
    pass


class SmallnessRefused(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# frozen constants


def constants_path() -> Path:
    env = os.environ.get(CONSTANTS_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("aprs") / "data" / "constants.json"))


def load_constants(path=None) -> dict:
    path = Path(path) if path is not None else constants_path()
    if not path.exists():
        raise UncalibratedError(f"no frozen constants at {path}; run `aprs calibrate` first")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if "smallness" not in data or "inequalities" not in data:
        raise UncalibratedError(f"constants file {path} is incomplete")
    return data


def save_constants(data: dict, path=None) -> Path:
    path = Path(path) if path is not None else constants_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _exp_factor(bar_norm: float, C: float, nu_h: float) -> float:
    if C is None or not math.isfinite(C):
        return 1.0
    return math.exp(bar_norm / (C * nu_h))


def smallness_entry(constants: dict, eps=None) -> dict:
    table = constants["smallness"]
    if eps is None:
        if "primitive" not in table:
            raise UncalibratedError("primitive smallness constants missing")
        return table["primitive"]
    ns = table.get("ns", {})
    if not ns:
        raise UncalibratedError("anisotropic smallness constants missing")
    key = min(ns, key=lambda k: abs(math.log(float(k)) - math.log(eps)))
    if not math.isclose(float(key), eps):
        log.info("no smallness constants at eps=%s, using eps=%s", eps, key)
    return ns[key]


# ---------------------------------------------------------------------------
# smallness


@dataclass
class SmallnessCheck:
    tilde_norm: float
    bar_norm: float
    nu_h: float
    C_cal: float
    c_cal: float
    lhs: float
    verdict: str

    @property
    def green(self) -> bool:
        return self.verdict == "green"


def fluctuation_pair(uth: np.ndarray, lattice: Lattice, eps=None) -> np.ndarray:
    """``u~^h`` or, with ``eps``, the triple ``(u~^h, eps u~^v)``."""
    if eps is None:
        return uth
    return np.concatenate([uth, eps * vertical_velocity_coeffs(uth, lattice)[None]])


def smallness_from_norms(tilde_norm, bar_norm, nu_h, entry) -> SmallnessCheck:
    C = entry.get("C")
    C = math.inf if C in (None, "inf") else float(C)
    c = float(entry["c"])
    lhs = tilde_norm * _exp_factor(bar_norm, C, nu_h)
    verdict = "green" if lhs <= c * nu_h else "red"
    return SmallnessCheck(tilde_norm, bar_norm, nu_h, C, c, lhs, verdict)


def check_smallness(data: InitialDataDescriptor, lattice: Lattice, nu_h: float, eps=None,
                    constants=None) -> SmallnessCheck:
    """Verdict of ``||u~_0|| exp(||u_bar_0|| / (C nu_h)) <= c nu_h`` with frozen (C, c)."""
    constants = constants if constants is not None else load_constants()
    entry = smallness_entry(constants, eps)
    ubar, uth = data.build(lattice)
    tilde = b0_half(fluctuation_pair(uth, lattice, eps), lattice)
    bar = math.sqrt(mean_energy(ubar, lattice))
    return smallness_from_norms(tilde, bar, nu_h, entry)


def apriori_bound(check: SmallnessCheck) -> float:
    """Initial-data bound on the monitored quantity: ``2 ||u~_0|| exp(||u_bar_0|| / (C nu_h))``."""
    return BOOTSTRAP_FACTOR * check.lhs


# ---------------------------------------------------------------------------
# a priori monitor


@dataclass
class MonitorEvent:
    step: int
    time: float
    total: float
    bound: float
    terms: dict


@dataclass
class AprioriMonitor:
    """Streaming ``L~^inf(B) + w_h sqrt(nu_h) L~^2(B)(grad_h) [+ sqrt(eps^(gamma-2)) L~^2(B)(dz)]``.

    The horizontal weight ``w_h`` is 1/2 for the primitive system and 1 for
    the rescaled system; the vertical term exists only for the latter.
    """

    lattice: Lattice
    nu_h: float
    bound: float
    eps: float | None = None
    gamma: float | None = None
    linf_besov: float = 0.0
    l2_grad_besov: float = 0.0
    l2_dz_besov: float = 0.0
    history: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def __post_init__(self):
        n = len(make_partition().block_indices(self.lattice))
        self._fluct = TimeNormAccumulator(n)
        self._grad = TimeNormAccumulator(n)
        self._dz = TimeNormAccumulator(n)

    @property
    def horizontal_weight(self) -> float:
        return 0.5 if self.eps is None else 1.0

    def terms(self) -> dict:
        out = {
            "linf": self.linf_besov,
            "grad_h": self.horizontal_weight * math.sqrt(self.nu_h) * self.l2_grad_besov,
        }
        if self.eps is not None:
            out["dz"] = math.sqrt(self.eps ** (self.gamma - 2.0)) * self.l2_dz_besov
        return out

    @property
    def total(self) -> float:
        return float(sum(self.terms().values()))

    def update(self, step, time, state, diag=None):
        lat = self.lattice
        fl = state[1]
        self._fluct.update(time, block_norms(fl, lat))
        self._grad.update(time, block_norms(np.concatenate([1j * lat.kx * fl, 1j * lat.ky * fl]), lat))
        if self.eps is not None:
            self._dz.update(time, block_norms(1j * lat.kz * fl, lat))
        self.linf_besov = self._fluct.linf()
        self.l2_grad_besov = self._grad.l2()
        self.l2_dz_besov = self._dz.l2()
        total = self.total
        self.history.append((time, total))
        if total > self.bound:
            self.events.append(MonitorEvent(step, time, total, self.bound, self.terms()))

    __call__ = update

    @property
    def violated(self) -> bool:
        return bool(self.events)


def apriori_monitor_attach(cfg: RunConfig, bound: float) -> AprioriMonitor:
    """Monitor to pass as ``callback`` to :meth:`CoupledSolver.run`."""
    if cfg.system == "primitive":
        return AprioriMonitor(cfg.lattice, cfg.nu_h, bound)
    return AprioriMonitor(cfg.lattice, cfg.nu_h, bound, eps=cfg.eps, gamma=cfg.gamma)


def monitored_run(cfg: RunConfig, constants=None, store_states=False):
    """Run with the monitor attached; the bound comes from the smallness check of the data."""
    constants = constants if constants is not None else load_constants()
    eps = cfg.eps if cfg.system == "ns_aniso" else None
    check = check_smallness(cfg.init, cfg.lattice, cfg.nu_h, eps, constants)
    monitor = apriori_monitor_attach(cfg, apriori_bound(check))
    traj = CoupledSolver(cfg).run(store_states=store_states, callback=monitor)
    return check, monitor, traj


# ---------------------------------------------------------------------------
# Poincare inequalities


def _l2(coeffs, lat):
    return float(np.sqrt(lat.measure * np.sum(np.abs(coeffs) ** 2)))


def poincare_checks(f: SpectralField, horizontal_constant: float | None = None) -> dict:
    """Vertical (factor 2) and horizontal Poincare ratios in ``L^2``."""
    lat = f.lattice
    c = f.coeffs
    dz = 1j * lat.kz * c
    fluct_v = c.copy()
    fluct_v[..., 0] = 0.0
    fluct_h = c.copy()
    fluct_h[0, 0, :] = 0.0
    grad_h = np.stack([1j * lat.kx * c, 1j * lat.ky * c])
    report = {}
    ndz = _l2(dz, lat)
    report["vertical_lhs"] = _l2(fluct_v, lat)
    report["vertical_rhs"] = 2.0 * ndz
    report["vertical_ok"] = report["vertical_lhs"] <= report["vertical_rhs"] * (1 + 1e-12)
    if f.parity_v == "odd":
        report["odd_lhs"] = _l2(c, lat)
        report["odd_rhs"] = 2.0 * ndz
        report["odd_ok"] = report["odd_lhs"] <= report["odd_rhs"] * (1 + 1e-12)
    ngh = _l2(grad_h, lat)
    report["horizontal_lhs"] = _l2(fluct_h, lat)
    report["horizontal_ratio"] = report["horizontal_lhs"] / ngh if ngh > 0 else 0.0
    if horizontal_constant is not None:
        report["horizontal_rhs"] = horizontal_constant * ngh
        report["horizontal_ok"] = report["horizontal_lhs"] <= report["horizontal_rhs"] * (1 + 1e-12)
    return report


# ---------------------------------------------------------------------------
# convection lemmas


def _crop_index(n: int, factor: int):
    return np.rint(np.fft.fftfreq(n, 1.0 / n)).astype(int) % (factor * n)


def exact_product_coeffs(a: np.ndarray, b: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Coefficients of ``a b`` on the lattice modes, free of aliasing for inputs within the two-thirds band."""
    fa = np.fft.ifftn(pad_coeffs(a, 2), axes=(-3, -2, -1), norm="forward").real
    fb = np.fft.ifftn(pad_coeffs(b, 2), axes=(-3, -2, -1), norm="forward").real
    full = np.fft.fftn(fa * fb, axes=(-3, -2, -1), norm="forward")
    i1 = _crop_index(lattice.n_h, 2)
    i3 = _crop_index(lattice.n_v, 2)
    return full[..., i1[:, None, None], i1[None, :, None], i3[None, None, :]]


def _inner(c1, c2, lat):
    return float(lat.measure * np.sum((np.conj(c1) * c2).real))


@dataclass
class LemmaResult:
    lemma: str
    q: int
    lhs: float
    rhs: float
    ratio: float
    c_q: float
    skipped: bool = False
    reason: str = ""


def c_sequence(*accumulators_and_kinds) -> np.ndarray:
    """``c_q`` with ``sqrt(c_q)`` the mean of the supplied normalized block sequences; ``sum sqrt(c_q) = 1``."""
    seqs = []
    for acc, kind in accumulators_and_kinds:
        seqs.append(acc.c_sequence_linf() if kind == "linf" else acc.c_sequence_l2())
    root = np.mean(seqs, axis=0)
    return root**2


def _time_series_accumulators(series, lattice, times):
    n = len(make_partition().block_indices(lattice))
    acc, acc_grad = TimeNormAccumulator(n), TimeNormAccumulator(n)
    for t, c in zip(times, series):
        acc.update(t, block_norms(c, lattice))
        acc_grad.update(t, block_norms(np.stack([1j * lattice.kx * c, 1j * lattice.ky * c]), lattice))
    return acc, acc_grad


def _mean_zero(c, tol=1e-12) -> bool:
    scale = max(float(np.max(np.abs(c), initial=0.0)), 1e-300)
    flat = c.reshape((-1,) + c.shape[-3:]) if c.ndim > 3 else c[None]
    return all(abs(x[0, 0, 0]) <= tol * scale for x in flat)


def convection_lemma_table(a: list, b: list, lemma: str = "first", constant: float = 1.0, times=None) -> list:
    """Per-block lhs and rhs of a convection lemma along stored trajectories.

    ``a`` is a list of :class:`VelocityState` (divergence free), ``b`` a list of
    scalar :class:`SpectralField`. ``lemma`` is ``first`` (whole-space form) or
    ``torus`` (zero-mean form). ``rhs`` includes ``constant``.
    """
    if len(a) != len(b) or not a:
        raise ValueError("trajectories must be non-empty and share the time grid")
    lat = b[0].lattice
    times = np.asarray([s.time for s in a] if times is None else times, dtype=float)
    partition = make_partition()
    qs = partition.block_indices(lat)
    mult = partition.multipliers(lat)
    a_h = [np.stack([s.uh1.coeffs, s.uh2.coeffs]) for s in a]
    b_c = [f.coeffs for f in b]
    skip_reason = ""
    if lemma == "torus":
        if not all(_mean_zero(x) for x in a_h) or not all(_mean_zero(x) for x in b_c):
            skip_reason = "nonzero mean value of a or b"
    elif lemma != "first":
        raise ValueError(f"unknown lemma {lemma!r}")
    integrand = np.zeros((len(times), len(qs)))
    for i, (s, bc) in enumerate(zip(a, b_c)):
        conv = np.zeros(lat.shape, dtype=complex)
        for comp, k in ((s.uh1.coeffs, lat.kx), (s.uh2.coeffs, lat.ky), (s.uv.coeffs, lat.kz)):
            conv += exact_product_coeffs(comp, 1j * k * bc, lat)
        for j in range(len(qs)):
            m = mult[j][None, None, :]
            integrand[i, j] = abs(_inner(m * conv, m * bc, lat))
    lhs = np.array([np.trapezoid(integrand[:, j], times) if len(times) > 1 else 0.0 for j in range(len(qs))])
    acc_a, acc_ga = _time_series_accumulators(a_h, lat, times)
    acc_b, acc_gb = _time_series_accumulators(b_c, lat, times)
    cq = c_sequence((acc_b, "linf"), (acc_gb, "l2"), (acc_a, "linf"), (acc_ga, "l2"))
    A_inf, A_2, B_inf, B_2 = acc_a.linf(), acc_ga.l2(), acc_b.linf(), acc_gb.l2()
    if lemma == "first":
        product = math.sqrt(A_inf * A_2 * B_inf) * B_2**1.5 + A_2 * B_inf * B_2
    else:
        product = A_2 * B_inf * B_2 + A_inf * B_2**2
    out = []
    for j, q in enumerate(qs):
        rhs = constant * cq[j] * 2.0 ** (-q) * product
        if skip_reason:
            out.append(LemmaResult(lemma, q, lhs[j], rhs, math.nan, cq[j], True, skip_reason))
        elif cq[j] == 0 or lhs[j] == 0:
            out.append(LemmaResult(lemma, q, lhs[j], rhs, math.nan, cq[j], True, "empty block"))
        else:
            out.append(LemmaResult(lemma, q, lhs[j], rhs, lhs[j] / rhs, cq[j]))
    return out


def convection_lemma_check(a: list, b: list, q: int, lemma: str = "first", constant: float = 1.0):
    """``(lhs, rhs, ratio)`` for one block."""
    for res in convection_lemma_table(a, b, lemma, constant):
        if res.q == q:
            return res.lhs, res.rhs, res.ratio
    raise ValueError(f"block {q} outside the lattice ladder")


def mean_coupling_lemma_table(u_tilde: list, u_bar: list, times, lattice: Lattice, constant: float = 1.0) -> list:
    """Blocks of ``int |(Delta_q u~^h . grad_h u_bar | Delta_q u~^h)| dt`` against its bound.

    ``u_tilde`` holds ``(2, N_h, N_h, N_v)`` arrays, ``u_bar`` ``(2, N_h, N_h)`` arrays.
    """
    lat = lattice
    times = np.asarray(times, dtype=float)
    partition = make_partition()
    qs = partition.block_indices(lat)
    mult = partition.multipliers(lat)
    integrand = np.zeros((len(times), len(qs)))
    grad_sq = []
    for i, (ut, ub) in enumerate(zip(u_tilde, u_bar)):
        grad = np.zeros((2, 2) + lat.shape, dtype=complex)
        for j, k in enumerate((lat.kx2d, lat.ky2d)):
            for c in range(2):
                grad[c, j][..., 0] = 1j * k * ub[c]
        grad_sq.append(float(lat.measure_h * np.sum((lat.kx2d**2 + lat.ky2d**2) * np.abs(ub) ** 2)))
        for jq in range(len(qs)):
            m = mult[jq][None, None, :]
            blk = m * ut
            term = np.zeros((2,) + lat.shape, dtype=complex)
            for c in range(2):
                for j in range(2):
                    term[c] += exact_product_coeffs(blk[j], grad[c, j], lat)
            integrand[i, jq] = abs(sum(_inner(term[c], blk[c], lat) for c in range(2)))
    lhs = np.array([np.trapezoid(integrand[:, j], times) if len(times) > 1 else 0.0 for j in range(len(qs))])
    acc, acc_g = _time_series_accumulators([ut for ut in u_tilde], lat, times)
    cq = c_sequence((acc, "linf"), (acc_g, "l2"))
    bar_l2 = math.sqrt(float(np.trapezoid(grad_sq, times))) if len(times) > 1 else 0.0
    product = bar_l2 * acc.linf() * acc_g.l2()
    out = []
    for j, q in enumerate(qs):
        rhs = constant * cq[j] * 2.0 ** (-q) * product
        if cq[j] == 0 or lhs[j] == 0:
            out.append(LemmaResult("mean", q, lhs[j], rhs, math.nan, cq[j], True, "empty block"))
        else:
            out.append(LemmaResult("mean", q, lhs[j], rhs, lhs[j] / rhs, cq[j]))
    return out


def lemma_inputs(traj, include_mean: bool = False):
    """Velocity states of a primitive trajectory: the fluctuation ``u~`` or, with ``include_mean``, ``u_bar + u~``."""
    lat = traj.config.lattice
    states = []
    for t, ub, fl in zip(traj.times, traj.mean_states, traj.fluct_states):
        uh = _full_horizontal(ub, fl) if include_mean else fl[:2].copy()
        uv = vertical_velocity_coeffs(fl, lat)
        states.append(VelocityState(SpectralField(lat, uh[0], "even"), SpectralField(lat, uh[1], "even"),
                                    SpectralField(lat, uv, "odd"), t))
    return states


# ---------------------------------------------------------------------------
# two-solution stability


@dataclass
class StabilityRecord:
    times: np.ndarray
    phi: np.ndarray
    f_series: np.ndarray
    osgood_bound: np.ndarray
    constant: float
    log_form: np.ndarray
    perturbation_scale: float
    margin: float
    holds: bool


def _full_horizontal(ubar, fl):
    uh = fl[:2].copy()
    uh[0][..., 0] += ubar[0]
    uh[1][..., 0] += ubar[1]
    return uh


def perturbation_field(lattice: Lattice, seed: int, k_trunc=None) -> np.ndarray:
    from .spectral import friedrichs_mask

    d = random_fluctuation(lattice, generator(seed, STREAM_PERTURB))
    if k_trunc is not None:
        d = d * friedrichs_mask(lattice, k_trunc)
        d = d / b0_half(d, lattice)
    return d


def uniqueness_weight(lat, u1h, u2h, wh) -> float:
    """``(1 + sum ||.||^2_{H^{0,1/2}}) (1 + sum ||grad_h .||^2_{H^{0,1/2}})`` over ``u_1^h, u_2^h, w^h``."""
    def grad(c):
        return np.concatenate([1j * lat.kx * c, 1j * lat.ky * c])

    s0 = sum(sobolev_norm(c, lat, 0.5) ** 2 for c in (u1h, u2h, wh))
    s1 = sum(sobolev_norm(grad(c), lat, 0.5) ** 2 for c in (u1h, u2h, wh))
    return (1.0 + s0) * (1.0 + s1)


def _pair_series(cfg: RunConfig, perturbation_scale: float, perturb_seed: int):
    lat = cfg.lattice
    solver = CoupledSolver(cfg)
    ubar0, uth0 = cfg.init.build(lat, cfg.k_eff)
    delta = perturbation_field(lat, perturb_seed, cfg.k_eff)
    t1 = solver.run(ubar0, uth0, store_states=True)
    t2 = solver.run(ubar0, uth0 + perturbation_scale * delta, store_states=True)
    return t1, t2


def stability_series(t1, t2):
    """``phi``, ``f`` and the positive-index log factor along two trajectories on one grid."""
    cfg = t1.config
    lat = cfg.lattice
    phi, f, logf = [], [], []
    for ub1, fl1, ub2, fl2 in zip(t1.mean_states, t1.fluct_states, t2.mean_states, t2.fluct_states):
        w = fl2 - fl1
        phi.append(sobolev_norm(w, lat, -0.5) ** 2)
        f.append(uniqueness_weight(lat, _full_horizontal(ub1, fl1), _full_horizontal(ub2, fl2), w[:2]))
        wp = sobolev_norm(w, lat, 0.5) ** 2
        logf.append(math.log(1.0 + math.e + 1.0 / wp) if wp > 0 else math.inf)
    return np.array(t1.times), np.array(phi), np.array(f), np.array(logf)


def stability_ratio(times, phi, f) -> float:
    """Smallest C with ``phi(t) <= phi(0) + C int_0^t f mu(phi)`` on the grid (double-log modulus)."""
    mu = modulus("loglog")
    if phi[0] <= 0:
        return 0.0
    vals = np.array([f_i * mu(p) if 0 < p < 1 else (0.0 if p == 0 else math.inf) for f_i, p in zip(f, phi)])
    integral = cumulative_trapezoid(times, vals)
    excess = phi - phi[0]
    ratios = [e / g for e, g in zip(excess[1:], integral[1:]) if e > 0 and g > 0]
    return max([0.0] + ratios)


def stability_experiment(cfg: RunConfig, perturbation_scale: float, perturb_seed: int | None = None,
                         constant: float | None = None, constants=None, require_green: bool = True) -> StabilityRecord:
    """Two runs whose fluctuations differ by ``perturbation_scale`` times a unit-norm seeded field."""
    eps = cfg.eps if cfg.system == "ns_aniso" else None
    if constant is None or require_green:
        constants = constants if constants is not None else load_constants()
    if require_green:
        base = check_smallness(cfg.init, cfg.lattice, cfg.nu_h, eps, constants)
        pert_norm = base.tilde_norm + perturbation_scale
        pert = smallness_from_norms(pert_norm, base.bar_norm, cfg.nu_h, smallness_entry(constants, eps))
        if not (base.green and pert.green):
            raise SmallnessRefused("stability experiment needs smallness-green data for both runs")
    if constant is None:
        constant = float(constants["stability"][cfg.system]["C"])
    seed = cfg.init.seed if perturb_seed is None else perturb_seed
    t1, t2 = _pair_series(cfg, perturbation_scale, seed)
    times, phi, f, logf = stability_series(t1, t2)
    if phi[0] >= 1:
        raise ValueError("phi(0) >= 1; reduce the perturbation scale")
    bound = osgood_integrate(phi[0], (times, constant * f), "loglog")
    margin = float(np.min(bound - phi)) if len(phi) else 0.0
    holds = bool(np.all(phi <= bound))
    return StabilityRecord(times, phi, f, bound, constant, logf, perturbation_scale, margin, holds)
