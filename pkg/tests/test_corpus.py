import math

import numpy as np
import pytest

from aprs import corpus
from aprs.corpus import (
    FIXED_CONSTANTS,
    INEQUALITIES,
    Instance,
    calibrate_inequalities,
    evaluate,
    max_ratio,
    sparse_mask,
    verify_inequality,
)
from aprs.spectral import Lattice

SMALL = Lattice(8, 8)
FIELD_ONLY = [n for n in INEQUALITIES if not n.startswith("convection") and n != "commutator"]


def test_instance_ratio_edge_cases():
    assert Instance(0, 1.0, 2.0).ratio == 0.5
    assert Instance(0, 0.0, 0.0).ratio == 0.0
    assert Instance(0, 1.0, 0.0).ratio == math.inf


def test_sparse_mask_is_closed_under_sign_flips():
    lat = Lattice(16, 16)
    m = sparse_mask(lat, 3, 0.3)
    for axis in range(3):
        flipped = np.roll(np.flip(m, axis=axis), 1, axis=axis)
        assert np.array_equal(flipped, m)
    assert 0 < m.mean() < 1


def test_evaluate_restores_density_after_errors(monkeypatch):
    def boom(seed, lat):
        raise RuntimeError

    monkeypatch.setitem(INEQUALITIES, "boom", boom)
    with pytest.raises(RuntimeError):
        evaluate("boom", [0], SMALL, sparsity=0.1)
    assert corpus._SPARSE["value"] == 1.0


@pytest.mark.parametrize("name", FIELD_ONLY)
def test_instances_are_finite_and_nonnegative(name):
    for insts in evaluate(name, range(3), SMALL).values():
        assert insts
        for inst in insts:
            assert math.isfinite(inst.lhs) and math.isfinite(inst.rhs)
            assert inst.lhs >= 0 and inst.rhs >= 0


def test_commutator_instances():
    # on 8^3 the dealiased band lies inside the lowest block, so every commutator vanishes
    assert all(not insts for insts in evaluate("commutator", range(3), SMALL).values())
    for insts in evaluate("commutator", range(2)).values():
        assert insts and all(math.isfinite(i.ratio) and i.lhs > 0 for i in insts)


def test_poincare_ratios_respect_lowest_wavenumber():
    # the smallest nonzero wavenumber in either direction is pi/2
    for name in ("poincare_vertical", "poincare_horizontal"):
        assert max_ratio(evaluate(name, range(10), SMALL)) <= 2 / math.pi * (1 + 1e-12)


def test_minkowski_holds_with_unit_constant():
    assert max_ratio(evaluate("minkowski", range(10), SMALL)) <= 1 + 1e-12


def test_calibration_bookkeeping():
    table = calibrate_inequalities(range(3), names=["minkowski", "gn_classical"], probe_seeds=range(2),
                                   probe_sparsity=(0.3,))
    assert table["minkowski"]["C"] == FIXED_CONSTANTS["minkowski"] and table["minkowski"]["fixed"]
    gn = table["gn_classical"]
    assert not gn["fixed"]
    assert gn["C"] == gn["measured_max"] == max(gn["dense_max"], *gn["probe_max"].values())


def test_verification_passes_at_measured_constant_and_fails_below_it():
    measured = max_ratio(evaluate("gn_classical", range(5), SMALL))
    rows = verify_inequality("gn_classical", measured, seeds=range(5))
    assert all(r.passed and r.ratio <= 1 + 1e-12 for r in rows)
    rows = verify_inequality("gn_classical", measured / 2, seeds=range(5))
    assert not all(r.passed for r in rows)


def test_convection_instances_on_one_trajectory():
    for name in ("convection_first", "convection_torus", "convection_mean"):
        insts = evaluate(name, [0])[0]
        assert insts and all(math.isfinite(i.ratio) for i in insts)
