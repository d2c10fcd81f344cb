"""Time integration of the vertical-mean 2D flow, the hydrostatic fluctuation system and the
rescaled anisotropic Navier-Stokes family.

All three advance with a Lawson-type integrating-factor RK4: diffusion is
integrated exactly in spectral space and the projected nonlinearity with the
classical four-stage weights. Nonlinear products are evaluated on the
collocation grid, truncated by the two-thirds rule and by the Friedrichs band.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .littlewood_paley import TimeNormAccumulator, block_norms, make_partition, norm_report_from_blocks
from .seeding import STREAM_FLUCT, STREAM_MEAN, generator, random_fluctuation, random_mean_flow
from .spectral import (
    Lattice,
    ParameterError,
    SpectralField,
    SymmetryError,
    VelocityState,
    friedrichs_mask,
    leray_eps_coeffs,
    parity_residual,
    symmetrize,
)

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
PARITY_TOL = 1e-10
SYSTEMS = ("primitive", "ns_aniso")


class ConfigError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


class BlowUpError(RuntimeError):
    """Raised when a coefficient becomes non-finite or exceeds the blow-up threshold."""

    def __init__(self, message, step=None, time=None, last_state=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.last_state = last_state
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# configuration


@dataclass
class InitialDataDescriptor:
    """Mean flow plus fluctuation; ``amplitude`` is the B^{0,1/2} norm of the fluctuation.

    ``mean_part`` is ``zero``, ``random`` (unit L^2 norm scaled by
    ``mean_amplitude``) or ``taylor_green`` (``mean_amplitude`` times the
    unit-amplitude vortex ``(sin x cos y, -cos x sin y)`` in units of pi).
    ``fluct_part`` is ``zero`` or ``random``.
    """

    mean_part: str = "zero"
    fluct_part: str = "random"
    amplitude: float = 0.0
    mean_amplitude: float = 0.0
    seed: int = 0
    slope: float = 1.0

    def __post_init__(self):
        if self.mean_part not in ("zero", "random", "taylor_green"):
            raise ConfigError(f"unknown mean_part {self.mean_part!r}")
        if self.fluct_part not in ("zero", "random"):
            raise ConfigError(f"unknown fluct_part {self.fluct_part!r}")
        if self.amplitude < 0 or self.mean_amplitude < 0:
            raise ConfigError("amplitudes must be non-negative")

    def build_mean(self, lattice: Lattice) -> np.ndarray:
        if self.mean_part == "zero" or self.mean_amplitude == 0:
            return np.zeros((2,) + lattice.shape_h, dtype=complex)
        if self.mean_part == "taylor_green":
            return self.mean_amplitude * taylor_green(lattice)
        return self.mean_amplitude * random_mean_flow(lattice, generator(self.seed, STREAM_MEAN))

    def build_fluct(self, lattice: Lattice) -> np.ndarray:
        if self.fluct_part == "zero" or self.amplitude == 0:
            return np.zeros((2,) + lattice.shape, dtype=complex)
        return self.amplitude * random_fluctuation(lattice, generator(self.seed, STREAM_FLUCT), self.slope)

    def build(self, lattice: Lattice, k_trunc: float | None = None):
        """Return ``(u_bar, u_tilde_h)`` coefficient arrays, validated."""
        ubar = self.build_mean(lattice)
        uth = self.build_fluct(lattice)
        if k_trunc is not None:
            uth = uth * friedrichs_mask(lattice, k_trunc)
        div = lattice.kx2d * ubar[0] + lattice.ky2d * ubar[1]
        if np.max(np.abs(div), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(ubar), initial=0.0)):
            raise ConsistencyError("mean part is not divergence free")
        if np.max(np.abs(uth[:, :, :, 0]), initial=0.0) > 0:
            raise ConsistencyError("fluctuation has a vertical mean")
        return ubar, uth

    def to_dict(self):
        return dict(self.__dict__)


def taylor_green(lattice: Lattice) -> np.ndarray:
    """Coefficients of ``(sin(pi x) cos(pi y), -cos(pi x) sin(pi y))``."""
    x, y, _ = lattice.grid()
    X, Y = np.meshgrid(x, y, indexing="ij")
    u = np.sin(np.pi * X) * np.cos(np.pi * Y)
    v = -np.cos(np.pi * X) * np.sin(np.pi * Y)
    return np.stack([np.fft.fft2(u, norm="forward"), np.fft.fft2(v, norm="forward")])


@dataclass
class RunConfig:
    lattice: Lattice
    nu_h: float = 1.0
    gamma: float = 3.0
    eps: float | None = None
    k_trunc: float | None = None
    dt: float | None = None
    t_end: float = 1.0
    init: InitialDataDescriptor = field(default_factory=InitialDataDescriptor)
    output_every: int = 1
    system: str = "primitive"
    seed: int = 0
    convection: bool = True

    def __post_init__(self):
        if not self.nu_h > 0:
            raise ConfigError(f"nu_h must be positive, got {self.nu_h}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if self.k_trunc is not None and not self.k_trunc >= 1:
            raise ConfigError(f"k_trunc must be >= 1, got {self.k_trunc}")
        if self.eps is not None and not 0 < self.eps <= 1:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")
        if self.output_every < 1:
            raise ConfigError("output_every must be >= 1")
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}")
        if self.system == "ns_aniso" and self.eps is None:
            raise ConfigError("the anisotropic Navier-Stokes system needs eps")

    @property
    def k_eff(self) -> float:
        """Friedrichs index; the default admits every lattice mode with nonzero horizontal frequency."""
        if self.k_trunc is not None:
            return float(self.k_trunc)
        lat = self.lattice
        return float(max(lat.n_h / lat.l_h * math.sqrt(2.0), lat.n_v / 4.0, lat.l_h) + 1.0)

    def default_dt(self, ubar=None, uth=None) -> float:
        """``0.25 * min(diffusive bound, advective bound)``."""
        lat = self.lattice
        bound = 1.0 / (self.nu_h * math.pi**2 * (lat.n_h / lat.l_h) ** 2)
        umax = 0.0
        if ubar is not None:
            umax += float(np.max(np.abs(np.fft.ifft2(ubar, norm="forward").real), initial=0.0))
        if uth is not None:
            umax += float(np.max(np.abs(np.fft.ifftn(uth, axes=(-3, -2, -1), norm="forward").real), initial=0.0))
        if umax > 0:
            bound = min(bound, (lat.period_h / lat.n_h) / umax)
        return 0.25 * bound

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# operators on coefficient arrays


def _synth(c):
    return np.fft.ifftn(c, axes=(-3, -2, -1), norm="forward").real


def _synth2(c):
    return np.fft.ifft2(c, axes=(-2, -1), norm="forward").real


def _analyze2(v):
    return np.fft.fft2(v, axes=(-2, -1), norm="forward")


def vertical_velocity_coeffs(uth: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Odd antiderivative of ``-div_h u^h`` in z, dropping the ``n3 = 0`` plane."""
    div = 1j * (lattice.kx * uth[0] + lattice.ky * uth[1])
    kz = lattice.kz
    safe = np.where(kz == 0, 1.0, kz)
    out = -div / (1j * safe)
    out[..., 0] = 0.0
    return out


def reconstruct_vertical(uh, tol: float = 1e-10) -> SpectralField:
    """``u^v`` with ``dz u^v = -div_h u^h``; the vertical mean of ``div_h u^h`` must vanish."""
    u1, u2 = uh
    lat = u1.lattice
    div = 1j * (lat.kx * u1.coeffs + lat.ky * u2.coeffs)
    scale = math.sqrt(float(np.sum(lat.kh2 * (np.abs(u1.coeffs) ** 2 + np.abs(u2.coeffs) ** 2))))
    plane = math.sqrt(float(np.sum(np.abs(div[..., 0]) ** 2)))
    if plane > tol * max(scale, 1e-300) and plane > 0:
        raise ConsistencyError(f"vertical mean of div_h u^h is {plane / max(scale, 1e-300):.3e} (relative)")
    return SpectralField(lat, vertical_velocity_coeffs(np.stack([u1.coeffs, u2.coeffs]), lat), "odd")


def leray_2d(c: np.ndarray, lattice: Lattice) -> np.ndarray:
    kx, ky = lattice.kx2d, lattice.ky2d
    k2 = kx**2 + ky**2
    k2 = np.where(k2 == 0, 1.0, k2)
    dot = (kx * c[0] + ky * c[1]) / k2
    return np.stack([c[0] - kx * dot, c[1] - ky * dot])


def mean_flow_nonlinear(ubar: np.ndarray, lattice: Lattice) -> np.ndarray:
    """``-P(u . grad u)`` for the 2D field, dealiased."""
    kx, ky = lattice.kx2d, lattice.ky2d
    fields = _synth2(np.stack([ubar[0], ubar[1], 1j * kx * ubar[0], 1j * ky * ubar[0], 1j * kx * ubar[1],
                               1j * ky * ubar[1]]))
    u, v, ux, uy, vx, vy = fields
    conv = _analyze2(np.stack([u * ux + v * uy, u * vx + v * vy])) * lattice.dealias_mask_h
    return -leray_2d(conv, lattice)


def mean_gradient_sq(ubar: np.ndarray, lattice: Lattice) -> float:
    """``||grad_h u_bar||^2`` on the horizontal torus."""
    k2 = lattice.kx2d**2 + lattice.ky2d**2
    return float(lattice.measure_h * np.sum(k2 * np.abs(ubar) ** 2))


def mean_energy(ubar: np.ndarray, lattice: Lattice) -> float:
    return float(lattice.measure_h * np.sum(np.abs(ubar) ** 2))


def convection_coeffs(ubar, velocity_h, velocity_v, transported, lattice: Lattice, mean_coupling):
    """Spectral coefficients of ``u~ . grad T + u_bar . grad_h T + [u~^h . grad_h u_bar]``.

    ``transported`` has one row per transported component; ``mean_coupling``
    lists, per row, which mean-flow component enters the last term (or None).
    """
    kx, ky, kz = lattice.kx, lattice.ky, lattice.kz
    m = transported.shape[0]
    batch = np.concatenate(
        [velocity_h, velocity_v[None], 1j * kx * transported, 1j * ky * transported, 1j * kz * transported]
    )
    phys = _synth(batch)
    u1, u2, w = phys[0], phys[1], phys[2]
    dx, dy, dz = phys[3:3 + m], phys[3 + m:3 + 2 * m], phys[3 + 2 * m:3 + 3 * m]
    kx2, ky2 = lattice.kx2d, lattice.ky2d
    mean_phys = _synth2(np.stack([ubar[0], ubar[1], 1j * kx2 * ubar[0], 1j * ky2 * ubar[0],
                                  1j * kx2 * ubar[1], 1j * ky2 * ubar[1]]))[..., None]
    b1, b2 = mean_phys[0], mean_phys[1]
    bgrad = ((mean_phys[2], mean_phys[3]), (mean_phys[4], mean_phys[5]))
    a1, a2 = u1 + b1, u2 + b2
    out = np.empty((m,) + lattice.shape)
    for i in range(m):
        val = a1 * dx[i] + a2 * dy[i] + w * dz[i]
        j = mean_coupling[i]
        if j is not None:
            val = val + u1 * bgrad[j][0] + u2 * bgrad[j][1]
        out[i] = val
    return np.fft.fftn(out, axes=(-3, -2, -1), norm="forward")


def primitive_pressure_coeffs(conv: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Pressure (3D array, only the ``n3 = 0`` plane populated) with ``Delta_h p = -mean_z div_h conv``."""
    plane = 1j * (lattice.kx2d * conv[0][..., 0] + lattice.ky2d * conv[1][..., 0])
    k2 = lattice.kx2d**2 + lattice.ky2d**2
    p2 = np.where(k2 == 0, 0.0, plane / np.where(k2 == 0, 1.0, k2))
    out = np.zeros(lattice.shape, dtype=complex)
    out[..., 0] = p2
    return out


class _Model:
    """Nonlinear operator, linear symbol and bookkeeping for one system."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        lat = cfg.lattice
        self.lat = lat
        self.mask = lat.dealias_mask & friedrichs_mask(lat, cfg.k_eff)
        self.lin_bar = -cfg.nu_h * (lat.kx2d**2 + lat.ky2d**2)
        if cfg.system == "primitive":
            self.lin_fl = -cfg.nu_h * lat.kh2
            self.parities = ("even", "even")
        else:
            self.lin_fl = -cfg.nu_h * lat.kh2 - cfg.eps ** (cfg.gamma - 2.0) * np.broadcast_to(lat.kz**2, lat.shape)
            self.parities = ("even", "even", "odd")

    def nonlinear(self, state):
        ubar, fl = state
        lat = self.lat
        if not self.cfg.convection:
            return [np.zeros_like(ubar), np.zeros_like(fl)], 2 * self.cfg.nu_h * mean_gradient_sq(ubar, lat)
        tb = mean_flow_nonlinear(ubar, lat)
        if self.cfg.system == "primitive":
            uv = vertical_velocity_coeffs(fl, lat)
            conv = convection_coeffs(ubar, fl, uv, fl, lat, (0, 1)) * self.mask
            p = primitive_pressure_coeffs(conv, lat)
            tf = -conv - np.stack([1j * lat.kx * p, 1j * lat.ky * p])
        else:
            eps = self.cfg.eps
            conv = convection_coeffs(ubar, fl[:2], fl[2] / eps, fl, lat, (0, 1, None)) * self.mask
            p1, p2, p3 = leray_eps_coeffs(conv[0], conv[1], conv[2], lat, eps)
            tf = -np.stack([p1, p2, p3]) * self.mask
        tf = self._enforce_parity(tf)
        return [tb, tf], 2 * self.cfg.nu_h * mean_gradient_sq(ubar, lat)

    def _enforce_parity(self, tf):
        scale = np.max(np.abs(tf), initial=0.0)
        if scale == 0:
            return tf
        out = np.empty_like(tf)
        for i, par in enumerate(self.parities):
            res = parity_residual(tf[i], par) * (np.max(np.abs(tf[i]), initial=0.0) / scale)
            if res > PARITY_TOL:
                raise SymmetryError(f"parity drift {res:.3e} in component {i}")
            out[i] = symmetrize(tf[i], par)
        return out

    def full_rhs(self, state):
        (tb, tf), _ = self.nonlinear(state)
        ubar, fl = state
        return tb + self.lin_bar * ubar, tf + self.lin_fl * fl


def _lawson_rk4(state, dt, lin, nonlinear):
    """One integrating-factor RK4 step; returns the new state and the RK4-weighted auxiliary integral."""
    e_half = [np.exp(0.5 * dt * L) for L in lin]
    e_full = [eh * eh for eh in e_half]
    k1, d1 = nonlinear(state)
    s2 = [eh * (u + 0.5 * dt * k) for eh, u, k in zip(e_half, state, k1)]
    k2, d2 = nonlinear(s2)
    s3 = [eh * u + 0.5 * dt * k for eh, u, k in zip(e_half, state, k2)]
    k3, d3 = nonlinear(s3)
    s4 = [ef * u + dt * eh * k for ef, eh, u, k in zip(e_full, e_half, state, k3)]
    k4, d4 = nonlinear(s4)
    new = [
        ef * u + dt / 6.0 * (ef * a + 2.0 * eh * (b + c) + d)
        for ef, eh, u, a, b, c, d in zip(e_full, e_half, state, k1, k2, k3, k4)
    ]
    aux = dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return new, aux


# ---------------------------------------------------------------------------
# diagnostics and trajectories


@dataclass
class StepDiagnostics:
    step: int
    time: float
    l2_energy_mean: float
    dissipation_mean: float
    besov: object
    div_residual: float
    parity_residual: float
    energy_equality_residual: float = 0.0
    vertical_mean_drift: float = 0.0

    CSV_HEADER = ("step", "time", "l2_energy_mean", "dissipation_integral", "b0_half_fluct", "h0_half_fluct",
                  "div_residual", "parity_residual", "energy_equality_residual")

    def csv_row(self):
        b0 = self.besov.b0_half if self.besov is not None else 0.0
        h0 = self.besov.h0_half if self.besov is not None else 0.0
        return (self.step, self.time, self.l2_energy_mean, self.dissipation_mean, b0, h0, self.div_residual,
                self.parity_residual, self.energy_equality_residual)


@dataclass
class Trajectory:
    config: RunConfig
    times: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    mean_states: list = field(default_factory=list)
    fluct_states: list = field(default_factory=list)
    tendencies: list = field(default_factory=list)
    mean_grad_sq: list = field(default_factory=list)
    accumulators: dict = field(default_factory=dict)
    dt: float = 0.0
    steps: int = 0
    blown_up: bool = False

    @property
    def final_mean(self):
        return self.mean_states[-1]

    def velocity(self, i: int) -> VelocityState:
        """Physical fluctuation velocity at output ``i`` (vertical part unscaled)."""
        lat = self.config.lattice
        fl = self.fluct_states[i]
        if self.config.system == "primitive":
            uv = vertical_velocity_coeffs(fl, lat)
        else:
            uv = fl[2] / self.config.eps
        return VelocityState(SpectralField(lat, fl[0], "even"), SpectralField(lat, fl[1], "even"),
                             SpectralField(lat, uv, "odd"), self.times[i])


def _grad_h_stack(fl, lat):
    return np.concatenate([1j * lat.kx * fl, 1j * lat.ky * fl])


def _divergence_residual(ubar, fl, cfg: RunConfig) -> float:
    lat = cfg.lattice
    if cfg.system == "primitive":
        uv = vertical_velocity_coeffs(fl, lat)
        div = 1j * (lat.kx * fl[0] + lat.ky * fl[1] + lat.kz * uv)
        energy = np.abs(fl[0]) ** 2 + np.abs(fl[1]) ** 2 + np.abs(uv) ** 2
        grads = np.sum((lat.kx**2 + lat.ky**2 + lat.kz**2) * energy)
    else:
        div = 1j * (lat.kx * fl[0] + lat.ky * fl[1] + lat.kz / cfg.eps * fl[2])
        k2 = lat.kx**2 + lat.ky**2 + (lat.kz / cfg.eps) ** 2
        grads = np.sum(k2 * np.sum(np.abs(fl) ** 2, axis=0))
    div_bar = 1j * (lat.kx2d * ubar[0] + lat.ky2d * ubar[1])
    k2b = lat.kx2d**2 + lat.ky2d**2
    num = np.sum(np.abs(div) ** 2) + lat.n_v * np.sum(np.abs(div_bar) ** 2)
    den = grads + lat.n_v * np.sum(k2b * np.sum(np.abs(ubar) ** 2, axis=0))
    return float(np.sqrt(num / den)) if den > 0 else 0.0


class CoupledSolver:
    """Co-advances the 2D mean flow and the fluctuation system with a shared step."""

    def __init__(self, cfg: RunConfig, with_fluct: bool = True):
        self.cfg = cfg
        self.model = _Model(cfg)
        self.with_fluct = with_fluct
        self.partition = make_partition()
        self.n_blocks = len(self.partition.block_indices(cfg.lattice))

    def initial_state(self, ubar0=None, uth0=None):
        cfg = self.cfg
        lat = cfg.lattice
        if ubar0 is None or uth0 is None:
            b, f = cfg.init.build(lat, cfg.k_eff)
            ubar0 = b if ubar0 is None else ubar0
            uth0 = f if uth0 is None else uth0
        uth0 = np.asarray(uth0, dtype=complex) * friedrichs_mask(lat, cfg.k_eff)
        if cfg.system == "ns_aniso" and uth0.shape[0] == 2:
            uv = vertical_velocity_coeffs(uth0, lat)
            uth0 = np.concatenate([uth0, cfg.eps * uv[None]])
        return [np.asarray(ubar0, dtype=complex), uth0]

    def run(self, ubar0=None, uth0=None, store_states: bool = True, store_tendencies: bool = False,
            callback=None, check_invariants: bool = True) -> Trajectory:
        cfg = self.cfg
        lat = cfg.lattice
        state = self.initial_state(ubar0, uth0)
        dt = cfg.dt if cfg.dt is not None else cfg.default_dt(state[0], state[1][:2])
        n_steps = max(1, int(round(cfg.t_end / dt)))
        dt = cfg.t_end / n_steps
        traj = Trajectory(config=cfg, dt=dt)
        traj.accumulators = {
            "fluct": TimeNormAccumulator(self.n_blocks),
            "grad_h": TimeNormAccumulator(self.n_blocks),
            "dz": TimeNormAccumulator(self.n_blocks),
        }
        energy0 = mean_energy(state[0], lat)
        dissipation = 0.0
        if self.with_fluct:
            lin = [self.model.lin_bar, self.model.lin_fl]
            nonlinear = self.model.nonlinear
        else:
            lin = [self.model.lin_bar]

            def nonlinear(s):
                return [mean_flow_nonlinear(s[0], lat) if cfg.convection else np.zeros_like(s[0])], \
                    2 * cfg.nu_h * mean_gradient_sq(s[0], lat)

        def record(step, t, st):
            ubar = st[0]
            fl = st[1] if self.with_fluct else None
            energy = mean_energy(ubar, lat)
            resid = abs(energy + dissipation - energy0) / energy0 if energy0 > 0 else abs(energy + dissipation)
            report = None
            div_res = par_res = drift = 0.0
            if fl is not None:
                norms = block_norms(fl, lat)
                report = norm_report_from_blocks(norms)
                traj.accumulators["fluct"].update(t, norms)
                traj.accumulators["grad_h"].update(t, block_norms(_grad_h_stack(fl, lat), lat))
                traj.accumulators["dz"].update(t, block_norms(1j * lat.kz * fl, lat))
                div_res = _divergence_residual(ubar, fl, cfg)
                par_res = max(parity_residual(c, p) for c, p in zip(fl, self.model.parities))
                tot = np.sqrt(np.sum(np.abs(fl[:2]) ** 2))
                drift = float(np.sqrt(np.sum(np.abs(fl[:2, :, :, 0]) ** 2)) / tot) if tot > 0 else 0.0
            diag = StepDiagnostics(step, t, energy, dissipation, report, div_res, par_res, resid, drift)
            traj.times.append(t)
            traj.diagnostics.append(diag)
            traj.mean_grad_sq.append(mean_gradient_sq(ubar, lat))
            if store_states:
                traj.mean_states.append(ubar.copy())
                if fl is not None:
                    traj.fluct_states.append(fl.copy())
            if store_tendencies and fl is not None:
                tb, tf = self.model.full_rhs(st)
                total = tf.copy()
                total[0, :, :, 0] += tb[0]
                total[1, :, :, 0] += tb[1]
                traj.tendencies.append(total)
            if check_invariants and fl is not None:
                if div_res > 1e-10:
                    raise SymmetryError(f"incompressibility residual {div_res:.3e} at step {step}")
                if par_res > PARITY_TOL:
                    raise SymmetryError(f"parity residual {par_res:.3e} at step {step}")
            if not self.with_fluct:
                div = np.max(np.abs(lat.kx2d * ubar[0] + lat.ky2d * ubar[1]), initial=0.0)
                if div > 1e-8 * max(1.0, np.max(np.abs(ubar), initial=0.0)):
                    raise BlowUpError(f"divergence drift {div:.3e} at step {step}", step, t, st, traj)
            if callback is not None:
                callback(step, t, st, diag)

        record(0, 0.0, state)
        for step in range(1, n_steps + 1):
            new, aux = _lawson_rk4(state, dt, lin, nonlinear)
            peak = max(float(np.max(np.abs(a), initial=0.0)) for a in new)
            if not math.isfinite(peak) or peak > BLOWUP_THRESHOLD:
                traj.blown_up = True
                raise BlowUpError(f"coefficient magnitude {peak:.3e} at step {step}", step, step * dt, state, traj)
            state = new
            dissipation += aux
            traj.steps = step
            if step % cfg.output_every == 0 or step == n_steps:
                record(step, step * dt, state)
        traj.final_state = state
        return traj


def solve_2d_ns(u_bar0: np.ndarray, cfg: RunConfig, store_states: bool = True) -> Trajectory:
    """Integrate the 2D mean flow alone; diagnostics carry the energy-equality residual."""
    lat = cfg.lattice
    div = np.max(np.abs(lat.kx2d * u_bar0[0] + lat.ky2d * u_bar0[1]), initial=0.0)
    if div > 1e-10 * max(1.0, np.max(np.abs(u_bar0), initial=0.0)):
        raise ConsistencyError("initial mean flow is not divergence free")
    solver = CoupledSolver(cfg, with_fluct=False)
    return solver.run(u_bar0, np.zeros((2,) + lat.shape, dtype=complex), store_states=store_states)


def solve_coupled(cfg: RunConfig, system: str | None = None, **kwargs) -> Trajectory:
    if system is not None and system != cfg.system:
        cfg = cfg.replace(system=system)
    return CoupledSolver(cfg).run(**kwargs)


# ---------------------------------------------------------------------------
# field-level entry points


def _mean_array(u_bar, lattice):
    if u_bar is None:
        return np.zeros((2,) + lattice.shape_h, dtype=complex)
    return np.asarray(u_bar, dtype=complex)


def pressure_primitive(u_tilde: VelocityState, u_bar=None, k_trunc: float | None = None) -> SpectralField:
    """Pressure of the fluctuation system; independent of z with zero horizontal mean."""
    lat = u_tilde.lattice
    ubar = _mean_array(u_bar, lat)
    fl = np.stack([u_tilde.uh1.coeffs, u_tilde.uh2.coeffs])
    mask = lat.dealias_mask if k_trunc is None else lat.dealias_mask & friedrichs_mask(lat, k_trunc)
    conv = convection_coeffs(ubar, fl, u_tilde.uv.coeffs, fl, lat, (0, 1)) * mask
    return SpectralField(lat, primitive_pressure_coeffs(conv, lat), "even")


def rhs_primitive_fluct(state: VelocityState, u_bar, cfg: RunConfig):
    """Tendency of the horizontal fluctuation, diffusion included."""
    model = _Model(cfg.replace(system="primitive"))
    fl = np.stack([state.uh1.coeffs, state.uh2.coeffs])
    ubar = _mean_array(u_bar, cfg.lattice)
    _, tf = model.full_rhs([ubar, fl])
    return tuple(SpectralField(cfg.lattice, c, "even") for c in tf)


def rhs_ns_aniso(state: VelocityState, u_bar, cfg: RunConfig):
    """Tendency of ``(u~^h, eps u~^v)`` for the rescaled system."""
    if cfg.eps is None:
        raise ConfigError("eps is required for the anisotropic Navier-Stokes right-hand side")
    model = _Model(cfg.replace(system="ns_aniso"))
    fl = np.stack([state.uh1.coeffs, state.uh2.coeffs, cfg.eps * state.uv.coeffs])
    ubar = _mean_array(u_bar, cfg.lattice)
    _, tf = model.full_rhs([ubar, fl])
    return tuple(SpectralField(cfg.lattice, c, p) for c, p in zip(tf, ("even", "even", "odd")))


def rhs_mean_flow(u_bar, cfg: RunConfig) -> np.ndarray:
    lat = cfg.lattice
    ubar = _mean_array(u_bar, lat)
    return mean_flow_nonlinear(ubar, lat) - cfg.nu_h * (lat.kx2d**2 + lat.ky2d**2) * ubar


# ---------------------------------------------------------------------------
# lambda-weighted field


@dataclass
class WeightedNormSeries:
    times: np.ndarray
    weights: np.ndarray
    per_block: np.ndarray
    linf: float
    l2_grad: float


def cumulative_trapezoid(times, values) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(times)
    if len(times) > 1:
        out[1:] = np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))
    return out


def lambda_weighted_field(traj: Trajectory, lam: float, dissipation_series=None) -> WeightedNormSeries:
    """Block norms of ``exp(-lam * int_0^t ||grad_h u_bar||^2) u~(t)`` along a stored trajectory."""
    if lam < 0:
        raise ParameterError("lambda must be non-negative")
    if dissipation_series is None:
        dissipation_series = (traj.times, traj.mean_grad_sq)
    times, values = dissipation_series
    times = np.asarray(times, dtype=float)
    if len(times) != len(traj.times) or not np.allclose(times, traj.times):
        raise ParameterError("dissipation series must share the trajectory time grid")
    weights = np.exp(-lam * cumulative_trapezoid(times, values))
    lat = traj.config.lattice
    n_blocks = len(make_partition().block_indices(lat))
    acc = TimeNormAccumulator(n_blocks)
    acc_grad = TimeNormAccumulator(n_blocks)
    per_block = []
    for w, t, fl in zip(weights, traj.times, traj.fluct_states):
        norms = w * block_norms(fl, lat)
        per_block.append(norms)
        acc.update(t, norms)
        acc_grad.update(t, w * block_norms(_grad_h_stack(fl, lat), lat))
    return WeightedNormSeries(times, weights, np.array(per_block), acc.linf(), acc_grad.l2())
