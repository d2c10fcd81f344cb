"""Osgood comparison bounds.

For a modulus ``mu`` the comparison function is ``M(x) = int_x^{r_ref} dr / mu(r)``
and the bound is ``M^{-1}(M(a) - int_0^t gamma)``. All three moduli become
simple after the substitution ``r = exp(-s)``, so quadrature and inversion
are done in ``s``; the bound is returned as ``exp(-s)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize


class OsgoodDomainError(ValueError):
    pass


def _mu_linear(r):
    return r


def _mu_log(r):
    return r * (1.0 - math.log(r))


def _mu_loglog(r):
    return r * (1.0 - math.log(r)) * math.log(1.0 - math.log(r))


# (modulus, integrand of M in the s variable, left edge of the s domain, s of the reference point)
_MODULI = {
    "linear": (_mu_linear, lambda s: 1.0, -math.inf, 0.0),
    "log": (_mu_log, lambda s: 1.0 / (1.0 + s), -1.0, 0.0),
    # mu vanishes at r = 1 for the double-log modulus, so the reference point moves to 1/e
    "loglog": (_mu_loglog, lambda s: 1.0 / ((1.0 + s) * math.log1p(s)), 0.0, 1.0),
}

MODULUS_ALIASES = {
    "r": "linear",
    "r(1-ln r)": "log",
    "r(1-ln r)ln(1-ln r)": "loglog",
}


def _resolve(mu: str):
    key = MODULUS_ALIASES.get(mu, mu)
    if key not in _MODULI:
        raise ValueError(f"unknown modulus {mu!r}; choose from {sorted(_MODULI)}")
    return key


def modulus(mu: str):
    """The modulus ``mu`` as a scalar function of ``r``."""
    return _MODULI[_resolve(mu)][0]


def _m_of_s(s: float, key: str) -> float:
    _, g, _, s_ref = _MODULI[key]
    val, _ = integrate.quad(g, s_ref, s, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def comparison_function(x: float, mu: str) -> float:
    """``M(x) = int_x^{r_ref} dr / mu(r)`` by adaptive quadrature."""
    key = _resolve(mu)
    if not x > 0:
        raise OsgoodDomainError("M is infinite at 0")
    s = -math.log(x)
    if s <= _MODULI[key][2]:
        raise OsgoodDomainError(f"x = {x} outside the domain of the {key} modulus")
    return _m_of_s(s, key)


def _invert(target: float, s_start: float, key: str) -> float:
    edge = _MODULI[key][2]
    f = lambda s: _m_of_s(s, key) - target  # noqa: E731
    # M(s) is increasing in s; walk left from s_start until the target is bracketed
    hi = s_start
    while f(hi) < 0:
        hi = hi + max(1.0, abs(hi))
    step = 1.0
    lo = hi - step
    if math.isfinite(edge):
        lo = max(lo, 0.5 * (edge + hi))
    while f(lo) > 0:
        if math.isfinite(edge):
            lo = edge + 0.5 * (lo - edge)
            if lo - edge < 1e-300:
                raise OsgoodDomainError("comparison bound left the modulus domain")
        else:
            step *= 2.0
            lo = hi - step
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def osgood_integrate(a: float, gamma_series, mu: str = "log") -> np.ndarray:
    """Comparison bound at every time of ``gamma_series``.

    ``gamma_series`` is ``(times, values)``; its integral is the cumulative
    trapezoid rule on that grid. ``a = 0`` gives the zero bound and ``a >= 1``
    is rejected (rescale rho so that it stays below one).
    """
    key = _resolve(mu)
    times, values = (np.asarray(v, dtype=float) for v in gamma_series)
    if times.shape != values.shape or times.ndim != 1:
        raise ValueError("gamma series must be two equal-length 1D arrays")
    if np.any(values < 0):
        raise ValueError("gamma must be non-negative")
    if a < 0:
        raise OsgoodDomainError("a must be non-negative")
    if a == 0:
        return np.zeros_like(times)
    if a >= 1:
        raise OsgoodDomainError("a >= 1 lies outside the comparison domain; rescale rho below one")
    integral = np.zeros_like(times)
    if len(times) > 1:
        integral[1:] = np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))
    s_a = -math.log(a)
    m_a = _m_of_s(s_a, key)
    out = np.empty_like(times)
    s_prev = s_a
    for i, g in enumerate(integral):
        if g == 0:
            out[i] = a
            continue
        s_prev = _invert(m_a - g, s_prev, key)
        out[i] = math.exp(-s_prev)
    return out


def log_closed_form(a: float, t):
    """Closed-form bound for ``mu = r(1 - ln r)`` and ``gamma = 1``."""
    return np.exp(1.0 - (1.0 - math.log(a)) * np.exp(-np.asarray(t, dtype=float)))
