"""Vertical Littlewood-Paley calculus: dyadic blocks, Besov/Sobolev norms and paraproducts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    Lattice,
    LatticeMismatchError,
    ParameterError,
    SpectralField,
    analyze,
    pad_coeffs,
    synthesize,
)


def _smooth_ramp(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, built from exp(-1/t)."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


class DyadicPartition:
    """Plateau cutoff ``chi`` (1 on [-1, 1], 0 outside [-4/3, 4/3]) and annulus bump ``phi``.

    ``phi(t) = chi(t/2) - chi(t)`` so the sum ``chi(t) + sum_q phi(t/2^q)``
    telescopes to one.
    """

    inner = 1.0
    outer = 4.0 / 3.0

    def chi(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        return _smooth_ramp((self.outer - t) / (self.outer - self.inner))

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.chi(t / 2.0) - self.chi(t)

    @staticmethod
    def q_max(lattice: Lattice) -> int:
        return int(math.floor(math.log2(lattice.n_v / 2))) + 1

    def block_indices(self, lattice: Lattice):
        return list(range(-1, self.q_max(lattice) + 1))

    def multiplier(self, lattice: Lattice, q: int) -> np.ndarray:
        """Block multiplier as a 1D array over the vertical index."""
        fv = lattice.freq_v
        if q <= -2:
            return np.zeros_like(fv)
        if q == -1:
            return self.chi(fv)
        return self.phi(fv / 2.0**q)

    def multipliers(self, lattice: Lattice) -> np.ndarray:
        """Stacked multipliers, row ``i`` for block ``q = i - 1``."""
        return np.stack([self.multiplier(lattice, q) for q in self.block_indices(lattice)])


_DEFAULT_PARTITION = DyadicPartition()


def make_partition() -> DyadicPartition:
    return _DEFAULT_PARTITION


def block_coeffs(coeffs: np.ndarray, lattice: Lattice, q: int, partition=None) -> np.ndarray:
    partition = partition or _DEFAULT_PARTITION
    return coeffs * partition.multiplier(lattice, q)


def low_cut_coeffs(coeffs: np.ndarray, lattice: Lattice, q: int, partition=None) -> np.ndarray:
    """``S_q`` applied to a coefficient array: the sum of blocks strictly below ``q``."""
    partition = partition or _DEFAULT_PARTITION
    weight = np.zeros(lattice.n_v)
    for qq in range(-1, q):
        weight = weight + partition.multiplier(lattice, qq)
    return coeffs * weight


def dyadic_block(f: SpectralField, q: int, partition=None) -> SpectralField:
    return SpectralField(f.lattice, block_coeffs(f.coeffs, f.lattice, q, partition), f.parity_v)


def low_freq_cut(f: SpectralField, q: int, partition=None) -> SpectralField:
    return SpectralField(f.lattice, low_cut_coeffs(f.coeffs, f.lattice, q, partition), f.parity_v)


def ladder(f: SpectralField, partition=None):
    """All blocks ``q = -1 .. q_max`` as a list of fields."""
    partition = partition or _DEFAULT_PARTITION
    return [dyadic_block(f, q, partition) for q in partition.block_indices(f.lattice)]


def block_norms(coeffs: np.ndarray, lattice: Lattice, partition=None) -> np.ndarray:
    """``||Delta_q u||_{L^2}`` for every block; leading axes are treated as vector components."""
    partition = partition or _DEFAULT_PARTITION
    spectrum = np.abs(coeffs) ** 2
    while spectrum.ndim > 1:
        spectrum = spectrum.sum(axis=0)
    weights = partition.multipliers(lattice) ** 2
    return np.sqrt(lattice.measure * (weights @ spectrum))


@dataclass
class NormReport:
    """Norms derived from one dyadic ladder."""

    b0_half: float
    h0_s: dict
    b0_minus_half_inf: float
    per_block: list

    @property
    def h0_half(self):
        return self.h0_s[0.5]

    @property
    def h0_minus_half(self):
        return self.h0_s[-0.5]

    def csv_header(self):
        return ["time", "b0_half", "h0_half", "h0_minus_half"] + [f"block_{q}" for q, _ in self.per_block]

    def csv_row(self, time: float):
        return [time, self.b0_half, self.h0_half, self.h0_minus_half] + [v for _, v in self.per_block]


def norm_report_from_blocks(norms: np.ndarray) -> NormReport:
    qs = np.arange(-1, len(norms) - 1)
    weighted = 2.0 ** (qs / 2.0) * norms
    return NormReport(
        b0_half=float(weighted.sum()),
        h0_s={
            0.5: float(np.sqrt(np.sum(weighted**2))),
            -0.5: float(np.sqrt(np.sum((2.0 ** (-qs / 2.0) * norms) ** 2))),
        },
        b0_minus_half_inf=float(np.max(2.0 ** (-qs / 2.0) * norms)),
        per_block=[(int(q), float(v)) for q, v in zip(qs, weighted)],
    )


def besov_norm(f, partition=None) -> NormReport:
    """Norm report of a field or of a sequence of fields (vector norm over components)."""
    fields = [f] if isinstance(f, SpectralField) else list(f)
    lattice = fields[0].lattice
    coeffs = np.stack([g.coeffs for g in fields])
    return norm_report_from_blocks(block_norms(coeffs, lattice, partition))


def b0_half(coeffs: np.ndarray, lattice: Lattice) -> float:
    norms = block_norms(coeffs, lattice)
    qs = np.arange(-1, len(norms) - 1)
    return float(np.sum(2.0 ** (qs / 2.0) * norms))


def sobolev_norm(coeffs: np.ndarray, lattice: Lattice, s: float) -> float:
    norms = block_norms(coeffs, lattice)
    qs = np.arange(-1, len(norms) - 1)
    return float(np.sqrt(np.sum((2.0 ** (qs * s) * norms) ** 2)))


def direct_h0_half(coeffs: np.ndarray, lattice: Lattice) -> float:
    """Mode-sum form ``(measure * sum (1 + |n3|) |c_n|^2)^{1/2}``."""
    weight = 1.0 + np.abs(lattice.n3)
    return float(np.sqrt(lattice.measure * np.sum(weight * np.abs(coeffs) ** 2)))


@dataclass
class TimeNormAccumulator:
    """Running per-block sup and trapezoidal time integral of squared block norms."""

    n_blocks: int
    per_block_sup: np.ndarray = None
    per_block_l2: np.ndarray = None
    dt_weights: list = field(default_factory=list)
    _last_time: float = None
    _last_sq: np.ndarray = None
    pointwise_max: float = 0.0

    def __post_init__(self):
        self.per_block_sup = np.zeros(self.n_blocks)
        self.per_block_l2 = np.zeros(self.n_blocks)

    def update(self, time: float, norms: np.ndarray):
        norms = np.asarray(norms, dtype=float)
        self.per_block_sup = np.maximum(self.per_block_sup, norms)
        sq = norms**2
        if self._last_time is not None:
            h = time - self._last_time
            self.per_block_l2 = self.per_block_l2 + 0.5 * h * (self._last_sq + sq)
            self.dt_weights.append(h)
        self._last_time = time
        self._last_sq = sq
        qs = np.arange(-1, self.n_blocks - 1)
        self.pointwise_max = max(self.pointwise_max, float(np.sum(2.0 ** (qs / 2.0) * norms)))
        return self

    def _weights(self):
        qs = np.arange(-1, self.n_blocks - 1)
        return 2.0 ** (qs / 2.0)

    def linf(self) -> float:
        return float(np.sum(self._weights() * self.per_block_sup))

    def l2(self) -> float:
        return float(np.sum(self._weights() * np.sqrt(self.per_block_l2)))

    def c_sequence_linf(self) -> np.ndarray:
        total = self.linf()
        return self._weights() * self.per_block_sup / total if total > 0 else np.zeros(self.n_blocks)

    def c_sequence_l2(self) -> np.ndarray:
        total = self.l2()
        return self._weights() * np.sqrt(self.per_block_l2) / total if total > 0 else np.zeros(self.n_blocks)


# ---------------------------------------------------------------------------
# paraproducts


def _same_lattice(*fields):
    lat = fields[0].lattice
    for f in fields[1:]:
        if f.lattice != lat:
            raise LatticeMismatchError(f"{lat} vs {f.lattice}")
    return lat


def _product_coeffs(a: np.ndarray, b: np.ndarray, lattice: Lattice) -> np.ndarray:
    return analyze(synthesize(a) * synthesize(b)) * lattice.dealias_mask


def _blocks(coeffs, lattice, partition):
    return {q: block_coeffs(coeffs, lattice, q, partition) for q in partition.block_indices(lattice)}


def _low_cuts(blocks, q_values):
    """``S_q`` from precomputed blocks for every requested ``q``."""
    out = {}
    for q in q_values:
        acc = 0
        for qq, b in blocks.items():
            if qq <= q - 1:
                acc = acc + b
        out[q] = acc if not isinstance(acc, int) else np.zeros_like(next(iter(blocks.values())))
    return out


def bony_decompose(u: SpectralField, w: SpectralField, partition=None):
    """Return ``(T_u w, T_w u, R(u, w))`` with each elementary product dealiased."""
    lat = _same_lattice(u, w)
    partition = partition or _DEFAULT_PARTITION
    qs = partition.block_indices(lat)
    ub, wb = _blocks(u.coeffs, lat, partition), _blocks(w.coeffs, lat, partition)
    su = _low_cuts(ub, [q - 1 for q in qs])
    sw = _low_cuts(wb, [q - 1 for q in qs])
    t_uw = np.zeros(lat.shape, dtype=complex)
    t_wu = np.zeros(lat.shape, dtype=complex)
    rem = np.zeros(lat.shape, dtype=complex)
    for q in qs:
        t_uw += _product_coeffs(su[q - 1], wb[q], lat)
        t_wu += _product_coeffs(sw[q - 1], ub[q], lat)
        near = sum(wb[q + i] for i in (-1, 0, 1) if (q + i) in wb)
        rem += _product_coeffs(ub[q], near, lat)
    return (SpectralField(lat, t_uw), SpectralField(lat, t_wu), SpectralField(lat, rem))


def quasi_orthogonality_term(u: SpectralField, w: SpectralField, q: int, q_prime: int, partition=None):
    """``Delta_q(S_{q'-1}u Delta_{q'} w)``; vanishes when ``|q - q'| >= 5``."""
    lat = _same_lattice(u, w)
    partition = partition or _DEFAULT_PARTITION
    low = low_cut_coeffs(u.coeffs, lat, q_prime - 1, partition)
    high = block_coeffs(w.coeffs, lat, q_prime, partition)
    return SpectralField(lat, block_coeffs(_product_coeffs(low, high, lat), lat, q, partition))


def chemin_decompose(a_v: SpectralField, b: SpectralField, q: int, partition=None):
    """Four-term split of ``Delta_q(a dz b)``.

    ``A1 = S_{q-1}a dz Delta_q b`` is the transport term and
    ``A2 = sum_{|q'-q|<=4} [Delta_q, S_{q'-1}a] dz Delta_{q'} b`` collects
    commutators. ``A3 = sum_{|q'-q|<=4} (S_{q'-1}a - S_{q-1}a) dz Delta_q Delta_{q'} b``
    corrects the low-frequency factor, and
    ``A4 = sum_{q'>=q-3} Delta_q(S_{q'+2}(dz b) Delta_{q'} a)`` is the tail
    where ``a`` carries the high frequency. With these index ranges the four
    terms sum exactly to ``Delta_q(a dz b)``.
    """
    lat = _same_lattice(a_v, b)
    partition = partition or _DEFAULT_PARTITION
    qs = partition.block_indices(lat)
    dzb = 1j * lat.kz * b.coeffs
    ab = _blocks(a_v.coeffs, lat, partition)
    bb = _blocks(dzb, lat, partition)
    s_a = _low_cuts(ab, [qq - 1 for qq in range(q - 4, q + 5)])
    s_dzb = _low_cuts(bb, [qq + 2 for qq in qs])
    delta_q = lambda c: block_coeffs(c, lat, q, partition)  # noqa: E731
    zero = np.zeros(lat.shape, dtype=complex)

    a1 = _product_coeffs(s_a[q - 1], delta_q(dzb), lat)
    a2 = zero.copy()
    a3 = zero.copy()
    for qq in range(q - 4, q + 5):
        if qq not in bb:
            continue
        low = s_a[qq - 1]
        a2 += delta_q(_product_coeffs(low, bb[qq], lat)) - _product_coeffs(low, delta_q(bb[qq]), lat)
        a3 += _product_coeffs(low - s_a[q - 1], delta_q(bb[qq]), lat)
    a4 = zero.copy()
    for qq in qs:
        if qq >= q - 3:
            a4 += delta_q(_product_coeffs(s_dzb[qq + 2], ab[qq], lat))
    return tuple(SpectralField(lat, c) for c in (a1, a2, a3, a4))


def commutator(q: int, u: SpectralField, w: SpectralField, partition=None) -> SpectralField:
    """``[Delta_q, u] w = Delta_q(u w) - u Delta_q w``."""
    lat = _same_lattice(u, w)
    partition = partition or _DEFAULT_PARTITION
    uw = _product_coeffs(u.coeffs, w.coeffs, lat)
    return SpectralField(
        lat,
        block_coeffs(uw, lat, q, partition) - _product_coeffs(u.coeffs, block_coeffs(w.coeffs, lat, q, partition), lat),
    )


# ---------------------------------------------------------------------------
# mixed Lebesgue norms

_EXPONENTS = (1, 2, 4, np.inf)


def _lp(values, p, axes, cell):
    if p == np.inf:
        return np.max(np.abs(values), axis=axes)
    return (np.sum(np.abs(values) ** p, axis=axes) * cell) ** (1.0 / p)


def mixed_lebesgue_from_grid(values: np.ndarray, lattice: Lattice, p_h, q_v, order: str, oversample: int = 1):
    nx, ny, nz = values.shape
    cell_h = lattice.period_h**2 / (nx * ny)
    cell_v = lattice.period_v / nz
    if order == "h_outer":
        inner = _lp(values, q_v, axes=2, cell=cell_v)
        return float(_lp(inner, p_h, axes=(0, 1), cell=cell_h))
    if order == "v_outer":
        inner = _lp(values, p_h, axes=(0, 1), cell=cell_h)
        return float(_lp(inner, q_v, axes=0, cell=cell_v))
    raise ParameterError(f"order must be 'h_outer' or 'v_outer', got {order!r}")


def anisotropic_lebesgue_norm(f: SpectralField, p_h, q_v, order: str = "h_outer") -> float:
    """``||f||_{L_h^p(L_v^q)}`` (``h_outer``) or ``||f||_{L_v^q(L_h^p)}`` (``v_outer``).

    Evaluated on a twice oversampled collocation grid; finite exponents use
    the periodic rectangle rule.
    """
    for e in (p_h, q_v):
        if e not in _EXPONENTS:
            raise ParameterError(f"unsupported exponent {e}; choose from 1, 2, 4, inf")
    values = synthesize(pad_coeffs(f.coeffs, 2))
    return mixed_lebesgue_from_grid(values, f.lattice, p_h, q_v, order)
