"""Fourier representation of fields on the anisotropic periodic box.

Mode ``n = (n1, n2, n3)`` carries the basis function ``exp(i*pi*(n1*x/L_h + n2*y/L_h + n3*z/2))``.
Coefficients are stored in numpy FFT order, so index ``j`` along an axis of
length ``N`` holds mode ``n = j`` for ``j < N/2`` and ``n = j - N`` otherwise.
Collocation nodes are ``x_j = 2*L_h*j/N_h`` and ``z_j = 4*j/N_v`` (wrapped
into the symmetric period), and synthesis is ``f(x_j) = sum_n c_n e^{...}``.
The Nyquist planes are kept at zero so every retained mode has its
Hermitian partner on the lattice.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

PARITIES = ("even", "odd", "none")
SYMMETRY_TOL = 1e-12
SNAPSHOT_MAGIC = b"APRS"
SNAPSHOT_VERSION = 1
SNAPSHOT_KINDS = {"scalar": 0, "velocity_primitive": 1, "velocity_ns": 2, "mean_flow": 3}


class SymmetryError(ValueError):
    """Raised when coefficients violate Hermitian symmetry or declared parity."""


class LatticeMismatchError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class Lattice:
    """Truncated mode lattice with ``N_h`` modes per horizontal axis and ``N_v`` vertically.

    ``L_h`` sets the horizontal frequency scale: horizontal wavenumbers are
    ``pi*n/L_h`` and the horizontal collocation period is ``2*L_h``. The
    vertical wavenumber is always ``pi*n3/2`` with period 4.
    """

    def __init__(self, n_h: int, n_v: int, l_h: float = 2.0):
        for name, value in (("N_h", n_h), ("N_v", n_v)):
            if int(value) != value or value < 4 or value % 2:
                raise ParameterError(f"{name} must be an even integer >= 4, got {value}")
        if not l_h > 0:
            raise ParameterError(f"L_h must be positive, got {l_h}")
        self.n_h = int(n_h)
        self.n_v = int(n_v)
        self.l_h = float(l_h)

    def __eq__(self, other):
        return (
            isinstance(other, Lattice)
            and (self.n_h, self.n_v, self.l_h) == (other.n_h, other.n_v, other.l_h)
        )

    def __hash__(self):
        return hash((self.n_h, self.n_v, self.l_h))

    def __repr__(self):
        return f"Lattice(n_h={self.n_h}, n_v={self.n_v}, l_h={self.l_h})"

    @property
    def shape(self):
        return (self.n_h, self.n_h, self.n_v)

    @property
    def shape_h(self):
        return (self.n_h, self.n_h)

    @property
    def size(self):
        return self.n_h * self.n_h * self.n_v

    @property
    def period_h(self):
        return 2.0 * self.l_h

    @property
    def period_v(self):
        return 4.0

    @property
    def measure(self):
        return self.period_h**2 * self.period_v

    @property
    def measure_h(self):
        return self.period_h**2

    @cached_property
    def index_h(self):
        return np.rint(np.fft.fftfreq(self.n_h, 1.0 / self.n_h)).astype(int)

    @cached_property
    def index_v(self):
        return np.rint(np.fft.fftfreq(self.n_v, 1.0 / self.n_v)).astype(int)

    @cached_property
    def n1(self):
        return self.index_h[:, None, None]

    @cached_property
    def n2(self):
        return self.index_h[None, :, None]

    @cached_property
    def n3(self):
        return self.index_v[None, None, :]

    @cached_property
    def kx(self):
        return np.pi * self.n1 / self.l_h

    @cached_property
    def ky(self):
        return np.pi * self.n2 / self.l_h

    @cached_property
    def kz(self):
        return np.pi * self.n3 / 2.0

    @cached_property
    def kh2(self):
        """Squared horizontal wavenumber ``|pi*n_h/L_h|**2`` broadcast to the 3D shape."""
        return np.broadcast_to(self.kx**2 + self.ky**2, self.shape).copy()

    @cached_property
    def kx2d(self):
        return self.kx[:, :, 0]

    @cached_property
    def ky2d(self):
        return self.ky[:, :, 0]

    @cached_property
    def freq_v(self):
        """Scaled vertical frequency ``|n3|/2`` per vertical index (1D)."""
        return np.abs(self.index_v) / 2.0

    @cached_property
    def freq_h(self):
        """Scaled horizontal frequency ``|n_h|/L_h`` on the horizontal plane (2D)."""
        n1 = self.index_h[:, None]
        n2 = self.index_h[None, :]
        return np.sqrt(n1**2 + n2**2) / self.l_h

    @cached_property
    def nyquist_free(self):
        keep_h = np.abs(self.index_h) < self.n_h // 2
        keep_v = np.abs(self.index_v) < self.n_v // 2
        return keep_h[:, None, None] & keep_h[None, :, None] & keep_v[None, None, :]

    @cached_property
    def dealias_mask(self):
        """Two-thirds rule: keep ``|n_i| < N_i/3`` on every axis."""
        keep_h = 3 * np.abs(self.index_h) < self.n_h
        keep_v = 3 * np.abs(self.index_v) < self.n_v
        return keep_h[:, None, None] & keep_h[None, :, None] & keep_v[None, None, :]

    @cached_property
    def dealias_mask_h(self):
        return self.dealias_mask[:, :, 0]

    def grid(self, oversample: int = 1):
        """Collocation coordinates ``(x, y, z)`` as 1D arrays in FFT order, wrapped to the symmetric period."""
        out = []
        for n, period in ((self.n_h, self.period_h), (self.n_h, self.period_h), (self.n_v, self.period_v)):
            m = n * oversample
            pts = period * np.arange(m) / m
            out.append(np.where(pts >= period / 2, pts - period, pts))
        return tuple(out)

    def mesh(self, oversample: int = 1):
        x, y, z = self.grid(oversample)
        return np.meshgrid(x, y, z, indexing="ij")

    def to_dict(self):
        return {"n_h": self.n_h, "n_v": self.n_v, "l_h": self.l_h}


# ---------------------------------------------------------------------------
# array-level kernels (used by the solvers without wrapping)


def synthesize(coeffs: np.ndarray, axes=(-3, -2, -1)) -> np.ndarray:
    """Evaluate a coefficient array on the collocation grid (no symmetry checks)."""
    return np.fft.ifftn(coeffs, axes=axes, norm="forward").real


def analyze(values: np.ndarray, axes=(-3, -2, -1)) -> np.ndarray:
    return np.fft.fftn(values, axes=axes, norm="forward")


def reflect(coeffs: np.ndarray, axes) -> np.ndarray:
    """Return ``c(-n)`` along the given axes (FFT ordering)."""
    out = np.flip(coeffs, axis=axes)
    return np.roll(out, 1, axis=axes)


def hermitian_residual(coeffs: np.ndarray) -> float:
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        return 0.0
    mirror = np.conj(reflect(coeffs, axes=(-3, -2, -1)))
    return float(np.max(np.abs(coeffs - mirror)) / scale)


def parity_residual(coeffs: np.ndarray, parity: str) -> float:
    if parity == "none":
        return 0.0
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        return 0.0
    sign = 1.0 if parity == "even" else -1.0
    return float(np.max(np.abs(coeffs - sign * reflect(coeffs, axes=-1))) / scale)


def symmetrize(coeffs: np.ndarray, parity: str = "none") -> np.ndarray:
    """Average with the Hermitian mirror and, for a declared parity, the vertical reflection."""
    out = 0.5 * (coeffs + np.conj(reflect(coeffs, axes=(-3, -2, -1))))
    if parity != "none":
        sign = 1.0 if parity == "even" else -1.0
        out = 0.5 * (out + sign * reflect(out, axes=-1))
    return out


def pad_coeffs(coeffs: np.ndarray, factor: int) -> np.ndarray:
    """Zero-pad a 3D (or trailing-3D) coefficient array onto a lattice ``factor`` times finer."""
    if factor == 1:
        return coeffs
    shape = coeffs.shape[-3:]
    out = np.zeros(coeffs.shape[:-3] + tuple(factor * s for s in shape), dtype=complex)
    idx = [np.rint(np.fft.fftfreq(s, 1.0 / s)).astype(int) for s in shape]
    dest = [i % (factor * s) for i, s in zip(idx, shape)]
    out[..., dest[0][:, None, None], dest[1][None, :, None], dest[2][None, None, :]] = coeffs
    return out


def l2_norm_coeffs(coeffs: np.ndarray, measure: float) -> float:
    return float(np.sqrt(measure * np.sum(np.abs(coeffs) ** 2)))


# ---------------------------------------------------------------------------
# field types


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a real scalar field together with its declared vertical parity."""

    lattice: Lattice
    coeffs: np.ndarray
    parity_v: str = "none"

    def __post_init__(self):
        if self.parity_v not in PARITIES:
            raise ParameterError(f"unknown parity {self.parity_v!r}")
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.lattice.shape:
            raise LatticeMismatchError(f"coefficient shape {c.shape} does not match {self.lattice.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, lattice: Lattice, parity_v: str = "none"):
        return cls(lattice, np.zeros(lattice.shape, dtype=complex), parity_v)

    @classmethod
    def from_physical(cls, lattice: Lattice, values: np.ndarray, parity_v: str = "none"):
        """Build a field from grid values; the Nyquist planes are discarded."""
        values = np.asarray(values, dtype=float)
        if values.shape != lattice.shape:
            raise LatticeMismatchError(f"grid shape {values.shape} does not match {lattice.shape}")
        return cls(lattice, analyze(values) * lattice.nyquist_free, parity_v)

    def _same(self, other: "SpectralField"):
        if self.lattice != other.lattice:
            raise LatticeMismatchError(f"{self.lattice} vs {other.lattice}")

    def __add__(self, other):
        self._same(other)
        parity = self.parity_v if self.parity_v == other.parity_v else "none"
        return SpectralField(self.lattice, self.coeffs + other.coeffs, parity)

    def __sub__(self, other):
        self._same(other)
        parity = self.parity_v if self.parity_v == other.parity_v else "none"
        return SpectralField(self.lattice, self.coeffs - other.coeffs, parity)

    def __mul__(self, scalar):
        return SpectralField(self.lattice, self.coeffs * float(scalar), self.parity_v)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.lattice, -self.coeffs, self.parity_v)

    def l2_norm(self) -> float:
        return l2_norm_coeffs(self.coeffs, self.lattice.measure)

    def inner(self, other: "SpectralField") -> float:
        self._same(other)
        return float(self.lattice.measure * np.real(np.vdot(self.coeffs, other.coeffs)))

    def hermitian_residual(self) -> float:
        return hermitian_residual(self.coeffs)

    def parity_residual(self) -> float:
        return parity_residual(self.coeffs, self.parity_v)

    def with_parity(self, parity_v: str) -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs, parity_v)


@dataclass(frozen=True, eq=False)
class VelocityState:
    """Velocity triple with even horizontal components and an odd vertical component."""

    uh1: SpectralField
    uh2: SpectralField
    uv: SpectralField
    time: float = 0.0

    def __post_init__(self):
        lat = self.uh1.lattice
        if self.uh2.lattice != lat or self.uv.lattice != lat:
            raise LatticeMismatchError("velocity components live on different lattices")
        if self.uh1.parity_v != "even" or self.uh2.parity_v != "even" or self.uv.parity_v != "odd":
            raise SymmetryError("horizontal components must be even and the vertical component odd")

    @property
    def lattice(self):
        return self.uh1.lattice

    @property
    def components(self):
        return (self.uh1, self.uh2, self.uv)

    def divergence_residual(self) -> float:
        """``||div u|| / ||grad u||`` (zero when the gradient vanishes)."""
        lat = self.lattice
        div = 1j * (lat.kx * self.uh1.coeffs + lat.ky * self.uh2.coeffs + lat.kz * self.uv.coeffs)
        grad2 = sum(
            np.sum((lat.kx**2 + lat.ky**2 + lat.kz**2) * np.abs(c.coeffs) ** 2) for c in self.components
        )
        if grad2 == 0:
            return 0.0
        return float(np.sqrt(np.sum(np.abs(div) ** 2) / grad2))

    def check(self, tol: float = 1e-10) -> "VelocityState":
        res = self.divergence_residual()
        if res > tol:
            raise SymmetryError(f"incompressibility residual {res:.3e} exceeds {tol:.0e}")
        for comp in self.components:
            if comp.parity_residual() > tol:
                raise SymmetryError(f"parity drift {comp.parity_residual():.3e}")
        return self


# ---------------------------------------------------------------------------
# operations


def transform_to_physical(f: SpectralField, oversample: int = 1) -> np.ndarray:
    """Grid values of ``f``; rejects coefficients that do not describe a real field."""
    res = f.hermitian_residual()
    if res > SYMMETRY_TOL:
        raise SymmetryError(f"Hermitian symmetry violated (relative residual {res:.3e})")
    coeffs = pad_coeffs(f.coeffs, oversample) if oversample > 1 else f.coeffs
    return synthesize(coeffs)


def transform_to_spectral(lattice: Lattice, values: np.ndarray, parity_v: str = "none") -> SpectralField:
    return SpectralField.from_physical(lattice, values, parity_v)


_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


def wavenumber(lattice: Lattice, axis) -> np.ndarray:
    return (lattice.kx, lattice.ky, lattice.kz)[_AXES[axis]]


def derivative(f: SpectralField, axis) -> SpectralField:
    """Spectral derivative; a vertical derivative swaps even and odd parity."""
    if axis not in _AXES:
        raise ParameterError(f"unknown axis {axis!r}")
    coeffs = 1j * wavenumber(f.lattice, axis) * f.coeffs
    parity = f.parity_v
    if _AXES[axis] == 2 and parity != "none":
        parity = "odd" if parity == "even" else "even"
    return SpectralField(f.lattice, coeffs, parity)


def _check_eps(eps):
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")


def divergence_eps_coeffs(u1, u2, u3, lattice: Lattice, eps: float):
    return 1j * (lattice.kx * u1 + lattice.ky * u2 + (lattice.kz / eps) * u3)


def leray_eps_coeffs(u1, u2, u3, lattice: Lattice, eps: float):
    """Orthogonal projection onto ``div_eps``-free fields; the zero mode passes through unchanged."""
    kx, ky, kz = lattice.kx, lattice.ky, lattice.kz / eps
    k2 = kx**2 + ky**2 + kz**2
    k2 = np.where(k2 == 0.0, 1.0, k2)
    dot = (kx * u1 + ky * u2 + kz * u3) / k2
    return u1 - kx * dot, u2 - ky * dot, u3 - kz * dot


def divergence_eps(u, eps: float) -> SpectralField:
    """``div_h U^h + eps^{-1} dz U^v`` for a triple of fields."""
    _check_eps(eps)
    u1, u2, u3 = u
    lat = u1.lattice
    if u2.lattice != lat or u3.lattice != lat:
        raise LatticeMismatchError("components on different lattices")
    return SpectralField(lat, divergence_eps_coeffs(u1.coeffs, u2.coeffs, u3.coeffs, lat, eps))


def leray_project_eps(u, eps: float):
    _check_eps(eps)
    u1, u2, u3 = u
    lat = u1.lattice
    if u2.lattice != lat or u3.lattice != lat:
        raise LatticeMismatchError("components on different lattices")
    p1, p2, p3 = leray_eps_coeffs(u1.coeffs, u2.coeffs, u3.coeffs, lat, eps)
    return (
        SpectralField(lat, p1, u1.parity_v),
        SpectralField(lat, p2, u2.parity_v),
        SpectralField(lat, p3, u3.parity_v),
    )


def friedrichs_mask(lattice: Lattice, k: float) -> np.ndarray:
    """Boolean mask of modes with ``|n3|/2 <= k`` and ``1/k <= |n_h|/L_h <= k``."""
    if not k >= 1:
        raise ParameterError(f"truncation index must be >= 1, got {k}")
    fh = lattice.freq_h[:, :, None]
    fv = lattice.freq_v[None, None, :]
    return (fv <= k) & (fh >= 1.0 / k) & (fh <= k)


def friedrichs_truncate(f: SpectralField, k: float) -> SpectralField:
    return SpectralField(f.lattice, f.coeffs * friedrichs_mask(f.lattice, k), f.parity_v)


def dealias(f: SpectralField) -> SpectralField:
    return SpectralField(f.lattice, f.coeffs * f.lattice.dealias_mask, f.parity_v)


def product(u: SpectralField, w: SpectralField) -> SpectralField:
    """Pointwise product followed by two-thirds truncation."""
    u._same(w)
    values = synthesize(u.coeffs) * synthesize(w.coeffs)
    parity = "none"
    if u.parity_v != "none" and w.parity_v != "none":
        parity = "even" if u.parity_v == w.parity_v else "odd"
    return SpectralField(u.lattice, analyze(values) * u.lattice.dealias_mask, parity)


# ---------------------------------------------------------------------------
# binary snapshots

_HEADER = struct.Struct("<4sIIIdI")


def write_snapshot(path, lattice: Lattice, components, kind: str = "scalar") -> Path:
    """Write coefficient arrays as a header followed by interleaved little-endian (re, im) doubles.

    Components are written one after another, each in n1-major (C) order of
    the FFT-ordered coefficient array.
    """
    if kind not in SNAPSHOT_KINDS:
        raise ParameterError(f"unknown snapshot kind {kind!r}")
    path = Path(path)
    arrays = [np.ascontiguousarray(c, dtype="<c16") for c in components]
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, lattice.n_h, lattice.n_v, lattice.l_h,
                              SNAPSHOT_KINDS[kind]))
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.view("<f8").tobytes())
    return path


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(lattice, kind, [arrays])``."""
    data = Path(path).read_bytes()
    magic, version, n_h, n_v, l_h, kind_code = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"not a snapshot file (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    kind = {v: k for k, v in SNAPSHOT_KINDS.items()}[kind_code]
    offset = _HEADER.size
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n = int(np.prod(shape))
        flat = np.frombuffer(data, dtype="<f8", count=2 * n, offset=offset)
        offset += 16 * n
        arrays.append(flat.view("<c16").reshape(shape).astype(complex))
    return Lattice(n_h, n_v, l_h), kind, arrays
