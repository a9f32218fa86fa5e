import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerotrack.centerfix import (BiasModel, PolyBasis, apply_bias, fit_bias, load_bias,
                                 monomial_basis, poly_features, save_bias)
from oracles import z2_fixture


def test_full_basis_has_twenty_unique_terms():
    b = PolyBasis.full()
    assert b.dim == 20
    assert len(set(b.exponents)) == 20
    assert b.exponents[0] == (0, 0, 0)
    assert [sum(e) for e in b.exponents] == sorted(sum(e) for e in b.exponents)


def test_basis_validation():
    with pytest.raises(ValueError):
        PolyBasis(((0, 0, 0), (1, 0, 0), (1, 0, 0)))
    with pytest.raises(ValueError):
        PolyBasis(((1, 0, 0),))


def test_features_at_origin():
    f = poly_features([0.0, 0.0, 0.0], PolyBasis.full())
    assert f[0] == 1.0 and np.all(f[1:] == 0.0)


def test_features_at_ones():
    np.testing.assert_array_equal(poly_features([1.0, 1.0, 1.0], PolyBasis.full()), np.ones(20))


def test_features_brute_force():
    b = PolyBasis.full()
    f = poly_features([1.0, 2.0, 3.0], b)
    ref = {e: 1.0 ** e[0] * 2.0 ** e[1] * 3.0 ** e[2]
           for e in itertools.product(range(4), repeat=3) if sum(e) <= 3}
    assert set(ref) == set(b.exponents)
    for e, v in zip(b.exponents, f):
        assert v == ref[e]
    assert f[b.exponents.index((0, 1, 2))] == 18.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3))
def test_features_multiplicative(p):
    b = PolyBasis.full()
    f = dict(zip(b.exponents, poly_features(p, b)))
    for e1, e2 in itertools.product(b.exponents, repeat=2):
        s = tuple(a + c for a, c in zip(e1, e2))
        if s in f:
            assert f[s] == pytest.approx(f[e1] * f[e2], rel=1e-12, abs=1e-12)


def test_batch_matches_single():
    b = PolyBasis.full()
    P = np.random.default_rng(0).normal(size=(5, 3))
    F = poly_features(P, b)
    for k in range(5):
        np.testing.assert_array_equal(F[k], poly_features(P[k], b))


def test_identity_fit_has_zero_coefficients():
    pred, _ = z2_fixture()
    m = fit_bias(pred, pred, ridge=1e-9)
    assert np.abs(m.coeffs).max() < 1e-9


def test_z_squared_recovery():
    pred, true = z2_fixture()
    m = fit_bias(pred, true)
    assert m.coefficient((0, 0, 2), 2) == pytest.approx(0.01, abs=1e-6)
    others = np.abs(m.coeffs).copy()
    others[m.basis.exponents.index((0, 0, 2)), 2] = 0.0
    assert others.max() < 1e-5
    before = np.mean(np.sum((pred - true) ** 2, axis=1))
    after = np.mean(np.sum((apply_bias(m, pred) - true) ** 2, axis=1))
    assert after <= 0.05 * before


def test_constant_bias():
    pred, _ = z2_fixture()
    m = fit_bias(pred, pred + [0.5, 0.0, 0.0])
    assert m.coefficient((0, 0, 0), 0) == pytest.approx(0.5, abs=1e-6)


def test_apply_at_z10():
    pred, true = z2_fixture()
    m = fit_bias(pred, true)
    out = apply_bias(m, [0.0, 0.0, 10.0])
    assert out[2] - 10.0 == pytest.approx(1.0, abs=1e-4)


def test_refit_after_correction_is_zero():
    pred, true = z2_fixture()
    m = fit_bias(pred, true)
    corrected = apply_bias(m, pred)
    m2 = fit_bias(corrected, true)
    assert np.abs(m2.coeffs).max() < 1e-4


def test_zero_model_is_identity():
    p = np.random.default_rng(1).normal(size=(7, 3))
    np.testing.assert_array_equal(apply_bias(BiasModel.zero(), p), p)


def test_length_mismatch():
    with pytest.raises(ValueError):
        fit_bias(np.zeros((3, 3)), np.zeros((4, 3)))


def test_custom_basis_and_round_trip(tmp_path):
    basis = PolyBasis(((0, 0, 0), (0, 0, 1), (0, 0, 2)))
    pred, true = z2_fixture()
    m = fit_bias(pred, true, basis)
    save_bias(m, tmp_path / "b.json")
    back = load_bias(tmp_path / "b.json")
    assert back.basis == basis
    np.testing.assert_array_equal(back.coeffs, m.coeffs)
    np.testing.assert_array_equal(apply_bias(back, pred), apply_bias(m, pred))


def test_monomial_listing_is_graded():
    assert monomial_basis(1) == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
