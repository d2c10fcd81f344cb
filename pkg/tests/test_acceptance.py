"""Acceptance criteria, one test each.

Every test prints a ``PASS``/``FAIL`` line and records it for the terminal summary, then asserts.
Run standalone with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from aprs import suite
from aprs.config import parse_config
from aprs.convergence import run_sweep
from aprs.dynamics import (
    RunConfig,
    pressure_primitive,
    reconstruct_vertical,
    solve_2d_ns,
    taylor_green,
    vertical_velocity_coeffs,
)
from aprs.estimates import load_constants
from aprs.littlewood_paley import (
    bony_decompose,
    chemin_decompose,
    dyadic_block,
    ladder,
    make_partition,
    quasi_orthogonality_term,
)
from aprs.seeding import generator, random_fluctuation, random_mean_flow
from aprs.spectral import Lattice, SpectralField, VelocityState, leray_eps_coeffs, product, synthesize

from conftest import rand_field, rel

ROOT = Path(__file__).resolve().parents[1]
RESULTS = []
IDENTITY_SEEDS = range(100)
IDENTITY_TOL = 1e-11


def report(number, passed, summary):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {summary}"
    RESULTS.append(line)
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def constants():
    return load_constants()


def test_criterion_1_taylor_green_anchor():
    lat = Lattice(32, 4)
    start = time.perf_counter()
    traj = solve_2d_ns(taylor_green(lat), RunConfig(lattice=lat, nu_h=1.0, dt=1e-4, t_end=0.1))
    elapsed = time.perf_counter() - start
    x, y, _ = lat.grid()
    X, Y = np.meshgrid(x, y, indexing="ij")
    exact = math.exp(-2 * math.pi**2 * 0.1) * np.stack(
        [np.sin(np.pi * X) * np.cos(np.pi * Y), -np.cos(np.pi * X) * np.sin(np.pi * Y)])
    err = float(np.max(np.abs(synthesize(traj.mean_states[-1], axes=(-2, -1)) - exact)))
    report(1, err < 1e-6 and elapsed < 30, f"Taylor-Green max error {err:.3e} (< 1e-6), runtime {elapsed:.1f}s (< 30s)")


def test_criterion_2_energy_equality():
    lat = Lattice(16, 4)
    worst = 0.0
    for seed in range(10):
        ubar = random_mean_flow(lat, generator(seed, 0))
        traj = solve_2d_ns(ubar, RunConfig(lattice=lat, nu_h=0.05, t_end=0.5), store_states=False)
        worst = max(worst, max(d.energy_equality_residual for d in traj.diagnostics))
    report(2, worst < 1e-6, f"energy equality worst relative residual {worst:.3e} over 10 runs (< 1e-6)")


def _identity_errors():
    part = make_partition()
    errs = {}

    def note(name, value):
        errs[name] = max(errs.get(name, 0.0), value)

    lat_b, lat_c, lat_q = Lattice(8, 16), Lattice(8, 32), Lattice(8, 64)
    lat_p = Lattice(8, 8)
    galerkin = lat_p.dealias_mask
    for seed in IDENTITY_SEEDS:
        u, w = rand_field(lat_b, seed), rand_field(lat_b, seed + 1000)
        note("bony", rel(sum(p.coeffs for p in bony_decompose(u, w)), product(u, w).coeffs))
        note("partition", rel(sum(b.coeffs for b in ladder(u)), u.coeffs))

        a, b = rand_field(lat_c, seed), rand_field(lat_c, seed + 2000)
        dzb = SpectralField(lat_c, 1j * lat_c.kz * b.coeffs)
        full = product(a, dzb)
        for q in part.block_indices(lat_c):
            target = dyadic_block(full, q).coeffs
            got = sum(t.coeffs for t in chemin_decompose(a, b, q))
            note("chemin", float(np.max(np.abs(got - target))) / max(float(np.max(np.abs(full.coeffs))), 1e-300))

        u, w = rand_field(lat_q, seed), rand_field(lat_q, seed + 3000)
        scale = float(np.max(np.abs(u.coeffs))) * float(np.sum(np.abs(w.coeffs)))
        qs = part.block_indices(lat_q)
        for q in qs:
            for qp in qs:
                if abs(q - qp) >= 5:
                    note("quasi_orthogonality",
                         float(np.max(np.abs(quasi_orthogonality_term(u, w, q, qp).coeffs))) / scale)

        uth = random_fluctuation(lat_p, generator(seed, 1))
        uv = reconstruct_vertical((SpectralField(lat_p, uth[0], "even"), SpectralField(lat_p, uth[1], "even")))
        div_h = lat_p.kx * uth[0] + lat_p.ky * uth[1]
        note("vertical_reconstruction",
             float(np.max(np.abs(lat_p.kz * uv.coeffs + div_h))) / float(np.max(np.abs(div_h))))

        ubar = 0.5 * random_mean_flow(lat_p, generator(seed, 0))
        velocity = [SpectralField(lat_p, 0.3 * uth[0] * galerkin, "even"),
                     SpectralField(lat_p, 0.3 * uth[1] * galerkin, "even")]
        vv = vertical_velocity_coeffs(np.stack([f.coeffs for f in velocity]), lat_p)
        state = VelocityState(velocity[0], velocity[1], SpectralField(lat_p, vv, "odd"))
        p = pressure_primitive(state, ubar).coeffs
        note("pressure_dz", float(np.max(np.abs(lat_p.kz * p))) / max(float(np.max(np.abs(p))), 1e-300))

        triple = [rand_field(lat_p, seed, stream=10 + i).coeffs for i in range(3)]
        for eps in (1.0, 0.5, 0.125):
            once = leray_eps_coeffs(*triple, lat_p, eps)
            twice = leray_eps_coeffs(*once, lat_p, eps)
            note("leray_idempotent", max(rel(x, y) for x, y in zip(twice, once)))
            # (k_y a + k_z b / eps, -k_x a, -k_x b) is eps-divergence free for any a, b
            fa, fb = triple[0], triple[1]
            kx, ky, kz = lat_p.kx, lat_p.ky, lat_p.kz
            div_free = (ky * fa + kz / eps * fb, -kx * fa, -kx * fb)
            fixed = leray_eps_coeffs(*div_free, lat_p, eps)
            note("leray_fixed_point", max(rel(x, y) for x, y in zip(fixed, div_free)))
    return errs


def test_criterion_3_algebraic_identities():
    errs = _identity_errors()
    worst = max(errs, key=errs.get)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(3, all(v < IDENTITY_TOL for v in errs.values()),
           f"identities on 100 seeds each, worst {worst} {errs[worst]:.2e} (< 1e-11) [{detail}]")


def test_criterion_4_inequality_corpus(constants):
    start = time.perf_counter()
    outcomes = suite.inequality_checks(constants)
    elapsed = time.perf_counter() - start
    failed = [o.name for o in outcomes if not o.passed]
    # row ratios are already relative to the frozen constant
    worst = max(o.detail["max_ratio"] for o in outcomes)
    report(4, not failed and worst <= 1.05 and elapsed < 600,
           f"{len(outcomes)} inequalities on 50 fresh seeds, worst ratio/C {worst:.3f} (<= 1.05), "
           f"failed {failed or 'none'}, runtime {elapsed:.0f}s (< 600s)")


def test_criterion_5_apriori_monitors(constants):
    outcomes = suite.monitor_checks(constants)
    detail = ", ".join(f"{o.name} max/bound {o.detail['max_total_over_bound']:.3f} green={o.detail['all_green']}"
                       for o in outcomes)
    report(5, all(o.passed for o in outcomes), f"a priori monitors over 10 seeds per family: {detail}")


def test_criterion_6_stability(constants):
    outcomes = {o.name: o for o in suite.stability_checks(constants)}
    osg, same, scales = outcomes["stability:osgood"], outcomes["stability:identical"], outcomes["stability:scales"]
    phis = ", ".join(f"{v:.3e}" for v in scales.detail["phi_T"])
    report(6, osg.passed and same.passed and scales.passed,
           f"5 pairs below the Osgood bound={osg.passed} (min margin {osg.detail['min_margin']:.3g}), "
           f"identical pairs phi==0 {same.passed}, phi(T) over scales [{phis}] decreasing={scales.passed}")


def test_criterion_7_convergence_sweep():
    parsed = parse_config(ROOT / "configs" / "sweep.cfg")
    plan, template = parsed.sweep, parsed.run
    assert tuple(plan.eps_values) == (0.5, 0.25, 0.125, 0.0625) and plan.gamma == 3.0
    assert template.lattice.n_h == template.lattice.n_v == 16 and template.t_end == 0.5
    start = time.perf_counter()
    rep = run_sweep(plan, template)
    elapsed = time.perf_counter() - start
    members = rep.members
    violations = sum(not m.inequality_holds for m in members)
    d_weak = [m.d_weak for m in members]
    l2loc = [m.l2loc_h_eta for m in members]
    tend = [m.tendency_weak_norm for m in members]

    def decreasing(v):
        return all(b < a for a, b in zip(v, v[1:]))

    spread = max(tend) / min(tend) if min(tend) > 0 else math.inf
    ok = (not rep.partial and violations == 0 and decreasing(d_weak) and decreasing(l2loc) and spread < 10
          and elapsed < 1200)
    fmt = lambda v: "[" + ", ".join(f"{x:.3e}" for x in v) + "]"  # noqa: E731
    report(7, ok, f"sweep violations {violations}, d_weak {fmt(d_weak)}, l2loc_h_eta {fmt(l2loc)}, "
                  f"tendency max/min {spread:.2f} (< 10), runtime {elapsed:.0f}s (< 1200s)")


def test_criterion_8_osgood_anchor():
    outcome = suite.osgood_anchor(1e-8)
    report(8, outcome.passed, f"Osgood log-modulus anchor max error {outcome.detail['max_error']:.3e} (< 1e-8)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
