import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aprs.spectral import (
    Lattice,
    LatticeMismatchError,
    ParameterError,
    SpectralField,
    SymmetryError,
    VelocityState,
    derivative,
    divergence_eps,
    friedrichs_mask,
    friedrichs_truncate,
    leray_eps_coeffs,
    leray_project_eps,
    parity_residual,
    read_snapshot,
    symmetrize,
    transform_to_physical,
    transform_to_spectral,
    write_snapshot,
)

from conftest import rand_field, rel
from oracles import direct_synthesis

seeds = st.integers(0, 2**31)


def mode(lat, n, value, parity="none"):
    c = np.zeros(lat.shape, dtype=complex)
    c[n[0] % lat.n_h, n[1] % lat.n_h, n[2] % lat.n_v] += value
    c[-n[0] % lat.n_h, -n[1] % lat.n_h, -n[2] % lat.n_v] += np.conj(value)
    return SpectralField(lat, c, parity)


def test_lattice_validation():
    with pytest.raises(ParameterError):
        Lattice(6, 5)
    with pytest.raises(ParameterError):
        Lattice(2, 8)
    with pytest.raises(ParameterError):
        Lattice(8, 8, l_h=0.0)


def test_zero_field_synthesizes_to_zero(lat8):
    assert np.all(transform_to_physical(SpectralField.zeros(lat8)) == 0)


def test_cosine_mode_on_nodes(lat8):
    c = np.zeros(lat8.shape, dtype=complex)
    c[0, 0, 2] = c[0, 0, -2] = 0.5
    vals = transform_to_physical(SpectralField(lat8, c, "even"))
    _, _, z = lat8.mesh()
    assert np.max(np.abs(vals - np.cos(np.pi * z))) < 1e-14


def test_non_hermitian_rejected(lat8):
    c = np.zeros(lat8.shape, dtype=complex)
    c[1, 0, 0] = 1.0
    with pytest.raises(SymmetryError):
        transform_to_physical(SpectralField(lat8, c))


def test_synthesis_matches_direct_summation(lat8):
    f = rand_field(lat8, 3)
    x, y, z = lat8.mesh()
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    direct = direct_synthesis(f.coeffs, lat8, pts).reshape(lat8.shape)
    assert np.max(np.abs(direct.imag)) < 1e-12
    assert rel(transform_to_physical(f), direct.real) < 1e-12


@given(seeds)
def test_round_trip_identity(seed):
    lat = Lattice(8, 8)
    f = rand_field(lat, seed)
    back = transform_to_spectral(lat, transform_to_physical(f))
    assert rel(back.coeffs, f.coeffs) < 1e-12


@given(seeds)
def test_parseval(seed):
    lat = Lattice(8, 8)
    f = rand_field(lat, seed)
    vals = transform_to_physical(f)
    physical = np.sum(vals**2) * lat.measure / lat.size
    assert abs(physical - f.l2_norm() ** 2) / f.l2_norm() ** 2 < 1e-12


def test_derivative_of_constant_is_zero(lat8):
    c = np.zeros(lat8.shape, dtype=complex)
    c[0, 0, 0] = 2.0
    f = SpectralField(lat8, c, "even")
    for axis in "xyz":
        assert np.all(derivative(f, axis).coeffs == 0)


def test_vertical_derivative_of_cosine(lat8):
    f = mode(lat8, (0, 0, 2), 0.5, "even")
    d = derivative(f, "z")
    assert d.parity_v == "odd"
    _, _, z = lat8.mesh()
    assert np.max(np.abs(transform_to_physical(d) + np.pi * np.sin(np.pi * z))) < 1e-13


def test_derivative_parity_cycle(lat8):
    f = rand_field(lat8, 1, parity="even")
    assert derivative(derivative(f, "z"), "z").parity_v == "even"
    assert derivative(f, "x").parity_v == "even"


def test_derivative_against_finite_differences():
    lat = Lattice(8, 8)
    f = rand_field(lat, 5, slope=3.0)
    errors = []
    for over in (4, 8):
        vals = transform_to_physical(f, oversample=over)
        exact = transform_to_physical(derivative(f, "x"), oversample=over)
        h = lat.period_h / (lat.n_h * over)
        fd = (np.roll(vals, -1, axis=0) - np.roll(vals, 1, axis=0)) / (2 * h)
        errors.append(np.max(np.abs(fd - exact)))
    # halving h quarters the error of a centred difference
    assert 3.5 < errors[0] / errors[1] < 4.5


def _triple(lat, seed):
    return [rand_field(lat, seed, stream=10 + i).coeffs for i in range(3)]


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
def test_leray_divergence_free_and_idempotent(lat8, eps):
    u = _triple(lat8, 2)
    p = leray_eps_coeffs(*u, lat8, eps)
    div = 1j * (lat8.kx * p[0] + lat8.ky * p[1] + lat8.kz / eps * p[2])
    assert np.max(np.abs(div)) < 1e-10 * np.max(np.abs(u))
    pp = leray_eps_coeffs(*p, lat8, eps)
    assert max(rel(a, b) for a, b in zip(pp, p)) < 1e-12


def test_leray_fixed_point_on_divergence_free_input(lat8):
    eps = 0.25
    u = leray_eps_coeffs(*_triple(lat8, 4), lat8, eps)
    again = leray_eps_coeffs(*u, lat8, eps)
    assert max(rel(a, b) for a, b in zip(again, u)) < 1e-12


def test_leray_annihilates_gradient(lat8):
    eps = 0.5
    phi = mode(lat8, (2, 0, 2), 0.25).coeffs + mode(lat8, (2, 0, -2), 0.25).coeffs  # cos(pi x) cos(pi z)
    grad = (1j * lat8.kx * phi, 1j * lat8.ky * phi, 1j * lat8.kz / eps * phi)
    out = leray_eps_coeffs(*grad, lat8, eps)
    assert max(np.max(np.abs(c)) for c in out) < 1e-14


def test_leray_matches_dense_projection(lat8):
    """Orthogonal projection onto the null space of the divergence matrix."""
    u = _triple(lat8, 9)
    size = lat8.size
    kx, ky, kz = (np.broadcast_to(k, lat8.shape).ravel() for k in (lat8.kx, lat8.ky, lat8.kz))
    D = np.hstack([np.diag(1j * kx), np.diag(1j * ky), np.diag(1j * kz)])
    P = np.eye(3 * size) - np.linalg.pinv(D) @ D
    dense = (P @ np.concatenate([c.ravel() for c in u])).reshape(3, *lat8.shape)
    fast = leray_eps_coeffs(*u, lat8, 1.0)
    assert max(np.max(np.abs(a - b)) for a, b in zip(fast, dense)) < 1e-12


def test_leray_self_adjoint(lat8):
    eps = 0.3
    u, v = _triple(lat8, 11), _triple(lat8, 12)
    pu, pv = leray_eps_coeffs(*u, lat8, eps), leray_eps_coeffs(*v, lat8, eps)
    lhs = sum(np.vdot(a, b) for a, b in zip(pu, v))
    rhs = sum(np.vdot(a, b) for a, b in zip(u, pv))
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_leray_rejects_bad_eps(lat8):
    f = rand_field(lat8, 0)
    with pytest.raises(ParameterError):
        leray_project_eps((f, f, f), 0.0)
    with pytest.raises(ParameterError):
        divergence_eps((f, f, f), -1.0)


def test_divergence_eps_symbolic_example(lat8):
    eps = 0.5
    # u1 = sin(pi x) cos(pi z), u3 = -eps cos(pi x) sin(pi z): div_h u1 + eps^-1 dz u3 = 0
    x, y, z = lat8.mesh()
    u1 = transform_to_spectral(lat8, np.sin(np.pi * x) * np.cos(np.pi * z))
    u2 = SpectralField.zeros(lat8)
    u3 = transform_to_spectral(lat8, -eps * np.cos(np.pi * x) * np.sin(np.pi * z))
    assert np.max(np.abs(divergence_eps((u1, u2, u3), eps).coeffs)) < 1e-14


def test_divergence_of_constant_is_zero(lat8):
    c = np.zeros(lat8.shape, dtype=complex)
    c[0, 0, 0] = 1.0
    f = SpectralField(lat8, c)
    assert np.all(divergence_eps((f, f, f), 0.7).coeffs == 0)


def test_friedrichs_band_and_idempotency(lat16):
    f = rand_field(lat16, 8)
    once = friedrichs_truncate(f, 3)
    assert np.array_equal(friedrichs_truncate(once, 3).coeffs, once.coeffs)
    only_high = mode(lat16, (2, 0, 4), 1.0)
    assert np.all(friedrichs_truncate(only_high, 1).coeffs == 0)
    big = friedrichs_mask(lat16, 100)
    assert big[1:, :, :].all() and not big[0, 0, :].any()


def test_friedrichs_commutes_with_derivative(lat16):
    f = rand_field(lat16, 2)
    for axis in "xyz":
        a = derivative(friedrichs_truncate(f, 3), axis).coeffs
        b = friedrichs_truncate(derivative(f, axis), 3).coeffs
        assert np.array_equal(a, b)


def test_symmetrize_and_parity(lat8):
    f = rand_field(lat8, 3)
    even = symmetrize(f.coeffs, "even")
    odd = symmetrize(f.coeffs, "odd")
    assert parity_residual(even, "even") < 1e-15
    assert parity_residual(odd, "odd") < 1e-15
    assert rel(even + odd, f.coeffs) < 1e-14


def test_velocity_state_checks(lat8):
    e = rand_field(lat8, 1, parity="even")
    o = rand_field(lat8, 2, parity="odd")
    with pytest.raises(SymmetryError):
        VelocityState(o, e, o)
    with pytest.raises(SymmetryError):
        VelocityState(e, e, o).check()


def test_lattice_mismatch(lat8):
    with pytest.raises(LatticeMismatchError):
        rand_field(lat8, 0) + rand_field(Lattice(8, 16), 0)


def test_snapshot_round_trip(tmp_path, lat8):
    f = rand_field(lat8, 4)
    g = rand_field(lat8, 5)
    path = write_snapshot(tmp_path / "s.bin", lat8, [f.coeffs, g.coeffs], "velocity_primitive")
    data = path.read_bytes()
    assert data[:4] == b"APRS"
    lat, kind, arrays = read_snapshot(path)
    assert lat == lat8 and kind == "velocity_primitive"
    assert np.array_equal(arrays[0], f.coeffs) and np.array_equal(arrays[1], g.coeffs)
