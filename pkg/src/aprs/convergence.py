"""The thin-layer limit experiment: rescaled Navier-Stokes members against the hydrostatic baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import BlowUpError, CoupledSolver, InitialDataDescriptor, RunConfig
from .spectral import Lattice


@dataclass(frozen=True)
class TestFunction:
    """``bump(t) * e_component * cos(kx x + ky y) * cos(kz z)`` with wavenumbers ``pi * mode / (L_h, L_h, 2)``."""

    component: int
    mode: tuple
    bump: tuple  # (start, end) as fractions of the horizon

    def time_profile(self, times, t_end):
        a, b = self.bump[0] * t_end, self.bump[1] * t_end
        s = (2.0 * np.asarray(times, dtype=float) - (a + b)) / (b - a)
        inside = np.abs(s) < 1
        out = np.zeros_like(s)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def coeffs(self, lattice: Lattice) -> np.ndarray:
        """Horizontal-pair coefficient array of the spatial factor."""
        n1, n2, n3 = self.mode
        c = np.zeros((2,) + lattice.shape, dtype=complex)
        for s1, s2 in ((1, 1), (-1, -1)):
            for s3 in (1, -1):
                c[self.component, (s1 * n1) % lattice.n_h, (s2 * n2) % lattice.n_h, (s3 * n3) % lattice.n_v] += 0.25
        return c

    def values(self, lattice: Lattice) -> np.ndarray:
        x, y, z = lattice.mesh()
        n1, n2, n3 = self.mode
        v = np.zeros((2,) + lattice.shape)
        v[self.component] = np.cos(np.pi * (n1 * x + n2 * y) / lattice.l_h) * np.cos(np.pi * n3 * z / 2.0)
        return v


TEST_MODES = ((2, 0, 2), (0, 2, 2), (2, 2, 1), (1, 1, 2))
TEST_BUMPS = ((0.0, 1.0), (0.25, 0.75))
DEFAULT_TEST_FUNCTIONS = tuple(TestFunction(c, m, b) for c in (0, 1) for m in TEST_MODES for b in TEST_BUMPS)


@dataclass
class SweepPlan:
    eps_values: tuple
    gamma: float = 3.0
    data: InitialDataDescriptor = field(default_factory=InitialDataDescriptor)
    test_functions: tuple = DEFAULT_TEST_FUNCTIONS
    weak_norm_order: float = 3.0
    eta: float = 0.25

    def __post_init__(self):
        eps = list(self.eps_values)
        if not eps or any(not 0 < e <= 1 for e in eps):
            raise ValueError("eps values must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps values must be strictly decreasing")
        if not self.weak_norm_order > 0:
            raise ValueError("weak norm order must be positive")
        if not 0 <= self.eta < 0.5:
            raise ValueError("eta must lie in [0, 1/2)")


def pairing(coeffs: np.ndarray, psi: np.ndarray, lattice: Lattice) -> float:
    """``int u . psi dx`` from coefficients (both real fields)."""
    return float(lattice.measure * np.sum((np.conj(psi) * coeffs).real))


def pairing_quadrature(values: np.ndarray, psi_values: np.ndarray, lattice: Lattice) -> float:
    return float(np.sum(values * psi_values) * lattice.measure / lattice.size)


def weak_norm(series, times, lattice: Lattice, order: float) -> float:
    """``(int sum_n (1 + |kappa_n|^2)^(-order) |c_n(t)|^2 dt)^(1/2)`` over a coefficient series.

    Coefficient-normalized: a single mode of amplitude ``|c|`` held for time
    ``T`` gives ``T^(1/2) (1 + |kappa|^2)^(-order/2) |c|``. ``order = 0`` is the
    plain ``L^2`` norm in the same normalization.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    k2 = lattice.kx**2 + lattice.ky**2 + lattice.kz**2
    w = (1.0 + k2) ** (-order)
    vals = []
    for c in series:
        c = np.asarray(c)
        power = np.abs(c) ** 2
        while power.ndim > 3:
            power = power.sum(axis=0)
        vals.append(float(np.sum(w * power)))
    times = np.asarray(times, dtype=float)
    if len(times) == 1:
        return 0.0
    return math.sqrt(max(float(np.trapezoid(vals, times)), 0.0))


def _sobolev_sq(c, lattice, s):
    k2 = lattice.kx**2 + lattice.ky**2 + lattice.kz**2
    power = np.abs(c) ** 2
    while power.ndim > 3:
        power = power.sum(axis=0)
    return float(lattice.measure * np.sum((1.0 + k2) ** s * power))


def _full_h(ubar, fl):
    u = fl[:2].copy()
    u[0][..., 0] += ubar[0]
    u[1][..., 0] += ubar[1]
    return u


@dataclass
class MemberReport:
    eps: float
    d_weak: float
    l2_eps_uv: float
    grad_bound: float
    l2loc_h_eta: float
    tendency_weak_norm: float
    linf_l2: float
    l2_h_eta: float
    blown_up: bool = False

    @property
    def inequality_holds(self) -> bool:
        return self.l2_eps_uv <= self.grad_bound


@dataclass
class ConvergenceReport:
    plan: SweepPlan
    members: list
    fitted_orders: dict
    partial: bool = False

    CSV_HEADER = ("eps", "d_weak", "l2_eps_uv", "l2loc_h_eta", "tendency_weak_norm")

    def column(self, name):
        return np.array([getattr(m, name) for m in self.members])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_HEADER)
            for m in self.members:
                w.writerow([repr(m.eps), repr(m.d_weak), repr(m.l2_eps_uv), repr(m.l2loc_h_eta),
                            repr(m.tendency_weak_norm)])
        return path

    def write_plot_data(self, directory) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for name in ("d_weak", "l2_eps_uv", "l2loc_h_eta"):
            path = directory / f"log2_{name}.dat"
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("log2_eps log2_value\n")
                for m in self.members:
                    v = getattr(m, name)
                    if m.eps > 0 and v > 0:
                        fh.write(f"{math.log2(m.eps)!r} {math.log2(v)!r}\n")
            out.append(path)
        return out


def fit_order(eps, values, last: int = 3) -> float:
    """Least-squares slope of ``log2 value`` against ``log2 eps`` over the last points."""
    e = np.asarray(eps, dtype=float)[-last:]
    v = np.asarray(values, dtype=float)[-last:]
    if len(e) < 2 or np.any(v <= 0):
        return math.nan
    return float(np.polyfit(np.log2(e), np.log2(v), 1)[0])


def time_derivative_bound_check(traj, cfg: RunConfig | None = None, order: float = 3.0) -> dict:
    """Weak norm of the stored tendency series of ``(u^h, eps u^v)``."""
    cfg = cfg or traj.config
    if not traj.tendencies:
        raise ValueError("trajectory has no stored tendencies; run with store_tendencies=True")
    value = weak_norm(traj.tendencies, traj.times, cfg.lattice, order)
    return {"eps": cfg.eps, "order": order, "tendency_weak_norm": value}


def _member_metrics(traj, base, plan: SweepPlan, psi, profiles):
    cfg = traj.config
    lat = cfg.lattice
    eps = cfg.eps
    times = np.asarray(traj.times)
    n = len(times)
    pair_series = np.zeros((len(psi), n))
    uv_sq, grad_sq, diff_eta, l2_sq, eta_sq = (np.zeros(n) for _ in range(5))
    for i in range(n):
        uh = _full_h(traj.mean_states[i], traj.fluct_states[i])
        ub = _full_h(base.mean_states[i], base.fluct_states[i])
        diff = uh - ub
        for j, p in enumerate(psi):
            pair_series[j, i] = pairing(diff, p, lat)
        uv_sq[i] = lat.measure * np.sum(np.abs(traj.fluct_states[i][2]) ** 2)
        grad_sq[i] = lat.measure * np.sum(lat.kh2 * np.sum(np.abs(uh) ** 2, axis=0))
        diff_eta[i] = _sobolev_sq(diff, lat, plan.eta)
        l2_sq[i] = lat.measure * np.sum(np.abs(uh) ** 2)
        eta_sq[i] = _sobolev_sq(uh, lat, plan.eta)
    d_weak = max(abs(float(np.trapezoid(profiles[j] * pair_series[j], times))) for j in range(len(psi)))
    l2_eps_uv = math.sqrt(float(np.trapezoid(uv_sq, times)))
    grad_bound = eps * math.sqrt(float(np.trapezoid(grad_sq, times)))
    return MemberReport(
        eps=eps,
        d_weak=d_weak,
        l2_eps_uv=l2_eps_uv,
        grad_bound=grad_bound,
        l2loc_h_eta=math.sqrt(float(np.trapezoid(diff_eta, times))),
        tendency_weak_norm=weak_norm(traj.tendencies, times, lat, plan.weak_norm_order),
        linf_l2=math.sqrt(float(np.max(l2_sq))),
        l2_h_eta=math.sqrt(float(np.trapezoid(eta_sq, times))),
    )


def run_sweep(plan: SweepPlan, template: RunConfig, on_member=None) -> ConvergenceReport:
    """Run the hydrostatic baseline and every rescaled member on one lattice and time grid."""
    lat = template.lattice
    base_cfg = template.replace(system="primitive", eps=None, init=plan.data, output_every=1)
    ubar0, uth0 = plan.data.build(lat, base_cfg.k_eff)
    if base_cfg.dt is None:
        base_cfg = base_cfg.replace(dt=base_cfg.default_dt(ubar0, uth0))
    base = CoupledSolver(base_cfg).run(ubar0, uth0, store_states=True)
    psi = [tf.coeffs(lat) for tf in plan.test_functions]
    profiles = [tf.time_profile(base.times, base_cfg.t_end) for tf in plan.test_functions]
    members = []
    partial = False
    for eps in plan.eps_values:
        cfg = base_cfg.replace(system="ns_aniso", eps=float(eps), gamma=plan.gamma)
        try:
            traj = CoupledSolver(cfg).run(ubar0, uth0, store_states=True, store_tendencies=True)
        except BlowUpError:
            partial = True
            members.append(MemberReport(eps, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan,
                                        blown_up=True))
            continue
        report = _member_metrics(traj, base, plan, psi, profiles)
        members.append(report)
        if on_member is not None:
            on_member(report)
    eps_list = [m.eps for m in members if not m.blown_up]
    orders = {}
    for name in ("d_weak", "l2_eps_uv", "l2loc_h_eta"):
        orders[name] = fit_order(eps_list, [getattr(m, name) for m in members if not m.blown_up])
    return ConvergenceReport(plan, members, orders, partial)
