"""Seeded random band-limited fields.

Every draw uses numpy's ``Philox`` counter-based generator (4x64 rounds=10)
keyed by the pair ``(seed, stream)`` as two unsigned 64-bit words, with
standard normal variates from ``Generator.standard_normal`` in C order
over the coefficient array (real parts first, then imaginary parts).
Streams separate the roles of one seed: 0 for the mean flow, 1 for the
fluctuation, 2 for perturbations, 3 and above for test corpora.
"""

from __future__ import annotations

import numpy as np

from .littlewood_paley import b0_half
from .spectral import Lattice, symmetrize

STREAM_MEAN = 0
STREAM_FLUCT = 1
STREAM_PERTURB = 2
STREAM_CORPUS = 3


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _complex_normal(rng: np.random.Generator, shape):
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return re + 1j * im


def random_scalar(
    lattice: Lattice,
    rng: np.random.Generator,
    parity: str = "none",
    slope: float = 1.0,
    dealiased: bool = True,
    zero_vertical_mean: bool = False,
    zero_horizontal_mean: bool = False,
    vertical_only_mean: bool = False,
) -> np.ndarray:
    """Random real field with spectral envelope ``(1 + |n|^2/4)^(-slope/2)``.

    ``zero_horizontal_mean`` removes all ``n_h = 0`` modes (every vertical
    slice has zero horizontal mean); ``zero_vertical_mean`` removes ``n3 = 0``.
    """
    c = _complex_normal(rng, lattice.shape)
    nn = (lattice.n1**2 + lattice.n2**2 + lattice.n3**2) / 4.0
    c = c * (1.0 + nn) ** (-slope / 2.0)
    mask = lattice.dealias_mask if dealiased else lattice.nyquist_free
    c = c * mask
    if zero_vertical_mean:
        c[:, :, 0] = 0.0
    if zero_horizontal_mean:
        c[0, 0, :] = 0.0
    if vertical_only_mean:
        c[0, 0, 0] = 0.0
    return symmetrize(c, parity)


def random_fluctuation(lattice: Lattice, rng: np.random.Generator, slope: float = 1.0) -> np.ndarray:
    """Horizontal fluctuation pair: even in z, no ``n3 = 0`` or ``n_h = 0`` content, unit B^{0,1/2} norm."""
    comps = np.stack(
        [
            random_scalar(lattice, rng, "even", slope, zero_vertical_mean=True, zero_horizontal_mean=True)
            for _ in range(2)
        ]
    )
    return comps / b0_half(comps, lattice)


def random_mean_flow(lattice: Lattice, rng: np.random.Generator, slope: float = 2.0) -> np.ndarray:
    """Divergence-free 2D field with zero mean and unit ``L^2(Omega_h)`` norm, shape ``(2, N_h, N_h)``."""
    n1 = lattice.index_h[:, None]
    n2 = lattice.index_h[None, :]
    psi = _complex_normal(rng, lattice.shape_h)
    psi = psi * (1.0 + (n1**2 + n2**2) / 4.0) ** (-slope / 2.0) * lattice.dealias_mask_h
    psi[0, 0] = 0.0
    psi = symmetrize(psi[:, :, None])[:, :, 0]
    ux = 1j * lattice.ky2d * psi
    uy = -1j * lattice.kx2d * psi
    u = np.stack([ux, uy])
    norm = np.sqrt(lattice.measure_h * np.sum(np.abs(u) ** 2))
    return u / norm if norm > 0 else u
