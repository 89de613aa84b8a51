import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fnpotential.errors import ArgumentError, DomainError
from fnpotential.grid import Ball, Grid
from fnpotential.pucci import (
    EllipticityPair,
    OperatorSpec,
    SymMatrix,
    averaged_operator,
    coefficient_bmo_modulus,
    coefficient_modulus,
    ellipticity_audit,
    evaluate_operator,
    pucci_minus,
    pucci_plus,
    random_symmetric,
)

E12 = EllipticityPair(1.0, 2.0)


def _mp_pucci_minus(X, lam, Lam):
    # extended-precision oracle: eigenvalues from mpmath at 50 digits
    with mpmath.workdps(50):
        w = mpmath.eigsy(mpmath.matrix(X.tolist()))[0]
        pos = sum((v for v in w if v > 0), mpmath.mpf(0))
        neg = sum((v for v in w if v < 0), mpmath.mpf(0))
        return float(lam * pos + Lam * neg)


def test_pucci_minus_examples():
    assert pucci_minus(SymMatrix.diag(1, -1), E12) == -1.0
    assert pucci_minus(np.eye(3), E12) == 3.0


def test_pucci_plus_examples():
    assert pucci_plus(SymMatrix.diag(1, -1), E12) == 1.0
    assert pucci_plus(-np.eye(2), E12) == -2.0


def test_pucci_minus_matches_extended_precision(rng):
    e = EllipticityPair(0.5, 3.0)
    for X in random_symmetric(rng, 4, 20):
        assert pucci_minus(X, e) == pytest.approx(_mp_pucci_minus(X, 0.5, 3.0), abs=1e-12)


def test_sign_symmetry_batch(rng):
    X = random_symmetric(rng, 3, 1000)
    assert np.max(np.abs(pucci_plus(X, E12) + pucci_minus(-X, E12))) <= 1e-12


def test_symmatrix_structure_and_eigh(rng):
    a = random_symmetric(rng, 4, 1)[0]
    S = SymMatrix.from_dense(a)
    assert len(S.upper) == 10
    np.testing.assert_array_equal(S.dense(), S.dense().T)
    w, q = S.eigh()
    assert np.all(np.diff(w) <= 0)
    err = np.linalg.norm(S.dense() - q @ np.diag(w) @ q.T)
    assert err <= 1e-10 * S.frobenius()
    with pytest.raises(ArgumentError):
        SymMatrix(2, (1.0, 2.0))


def test_ellipticity_pair_rejects_bad_bounds():
    with pytest.raises(ArgumentError):
        EllipticityPair(2.0, 1.0)
    with pytest.raises(ArgumentError):
        EllipticityPair(0.0, 1.0)


sym = arrays(np.float64, (3, 3), elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(sym, st.floats(0.01, 100))
def test_pucci_order_and_homogeneity(a, t):
    X = 0.5 * (a + a.T)
    lo, hi = pucci_minus(X, E12), pucci_plus(X, E12)
    scale = 1e-10 * max(1.0, np.abs(X).max())
    assert lo <= hi + scale
    assert pucci_plus(t * X, E12) == pytest.approx(t * hi, rel=1e-10, abs=scale * t)


@settings(max_examples=100, deadline=None)
@given(sym, st.floats(0.1, 10))
def test_equal_ellipticity_reduces_to_trace(a, lam):
    X = 0.5 * (a + a.T)
    e = EllipticityPair(lam, lam)
    tol = 1e-10 * max(1.0, lam * np.abs(X).sum())
    assert pucci_plus(X, e) == pytest.approx(lam * np.trace(X), abs=tol)
    assert pucci_minus(X, e) == pytest.approx(lam * np.trace(X), abs=tol)


def test_evaluate_operator_examples():
    lap = OperatorSpec.trace(np.eye(2).tolist(), EllipticityPair(1, 1))
    assert evaluate_operator(lap, [0.1, 0.2], SymMatrix.diag(2, 3)) == pytest.approx(5.0)
    b = OperatorSpec.bellman([np.eye(2).tolist(), (2 * np.eye(2)).tolist()], E12)
    assert evaluate_operator(b, [0, 0], SymMatrix.diag(1, -1)) == pytest.approx(0.0)
    b = OperatorSpec.bellman([[[1, 0], [0, 2]], [[2, 0], [0, 1]]], E12)
    assert evaluate_operator(b, [0, 0], SymMatrix.diag(1, -1)) == pytest.approx(1.0)


def test_operators_vanish_at_zero(bellman, laplacian):
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    for F in (bellman, laplacian, OperatorSpec.pucci("+", E12, 2)):
        np.testing.assert_array_equal(F(pts, np.zeros((2, 2))), 0.0)


def test_ellipticity_audit_examples():
    lap = OperatorSpec.trace(np.eye(2).tolist(), EllipticityPair(1, 1))
    rep = ellipticity_audit(lap, EllipticityPair(1, 1), samples=500)
    assert rep.passed and rep.worst_margin >= -1e-9
    b = OperatorSpec.bellman([[[1, 0], [0, 2]], [[1.5, 0.3], [0.3, 1.5]]], E12)
    w = np.linalg.eigvalsh([[1.5, 0.3], [0.3, 1.5]])
    assert w.min() >= 1 and w.max() <= 2
    assert ellipticity_audit(b, E12, samples=1000).passed
    bad = OperatorSpec.trace([[3, 0], [0, 1]], E12)
    rep = ellipticity_audit(bad, E12, samples=1000)
    assert rep.violations
    # the explicit witness X = diag(1, 0), Y = 0
    X = np.diag([1.0, 0.0])
    assert bad([[0, 0]], X)[0] - 0.0 > pucci_plus(X, E12)


def test_audit_report_json_has_seed(laplacian):
    rep = ellipticity_audit(laplacian, laplacian.ellipticity, samples=10, seed=7)
    assert '"seed": 7' in rep.to_json()


def test_averaged_operator_constant_is_identity(bellman, rng):
    g = Grid.square(32)
    avg = averaged_operator(bellman, Ball((0.0, 0.0), 0.5), g)
    X = random_symmetric(rng, 2, 100)
    pts = np.zeros((100, 2))
    assert np.max(np.abs(avg(pts, X) - bellman(pts, X))) <= 1e-12


def test_averaged_trace_coefficient_matches_cell_sum():
    g = Grid.square(64)
    F = OperatorSpec.trace([["1+x1**2", 0], [0, "1+x1**2"]], EllipticityPair(1, 2))
    B = Ball((0.0, 0.0), 0.5)
    avg = averaged_operator(F, B, g)
    pts = g.cell_centers()
    inside = np.sum(pts**2, axis=1) < 0.25 / 1.0
    # strict inclusion in cell units, as in the grid convention
    expected = 1 + np.mean(pts[inside, 0] ** 2)
    A = avg.coefficient_stack([[0.0, 0.0]])[0, 0, 0, 0]
    np.testing.assert_allclose(A, expected * np.eye(2), atol=1e-12)


def test_averaged_bellman_family_is_elliptic():
    g = Grid.square(32)
    F = OperatorSpec.bellman([[["1+0.5*x1**2", 0], [0, 1]], [[2, 0], [0, "1.5+0.5*sin(x2)"]]], E12)
    avg = averaged_operator(F, Ball((0.1, 0.0), 0.4), g)
    assert avg.form == "averaged"
    assert ellipticity_audit(avg, E12, samples=300).passed


def test_averaged_operator_empty_ball():
    g = Grid.square(16)
    F = OperatorSpec.trace([["1+x1**2", 0], [0, 1]], E12)
    with pytest.raises(DomainError):
        averaged_operator(F, Ball((5.0, 5.0), 0.1), g)


def test_bmo_modulus_zero_for_constant(bellman):
    g = Grid.square(32)
    assert coefficient_bmo_modulus(bellman, 0.5, g).omega_values == [0.0]


def test_bmo_modulus_scales_with_amplitude():
    g = Grid.square(64)
    vals = []
    for eps in (0.1, 0.2, 0.4):
        F = OperatorSpec.trace([[f"1+{eps}*sin(x1/0.05)", 0], [0, f"1+{eps}*sin(x1/0.05)"]],
                               EllipticityPair(0.5, 1.5))
        vals.append(coefficient_bmo_modulus(F, 0.25, g, probes=16, levels=4).omega_values[0])
    assert vals[0] < vals[1] < vals[2]
    # F - mean F = eps (s - mean s) tr Y, so the estimate is linear in eps
    np.testing.assert_allclose(np.array(vals) / [0.1, 0.2, 0.4], vals[0] / 0.1, rtol=1e-9)
    # |tr Y| <= sqrt(2) for unit Frobenius norm and mean|s - s_B| <= 1
    assert vals[2] <= 0.4 * np.sqrt(2)


def test_bmo_modulus_monotone_in_radius():
    g = Grid.square(32)
    F = OperatorSpec.trace([["1+0.3*sin(5*x1)", 0], [0, 1]], EllipticityPair(0.5, 1.5))
    mod = coefficient_modulus(F, [0.0625, 0.125, 0.25, 0.5], g, probes=8, levels=3)
    assert np.all(np.diff(mod.omega_values) >= -1e-12)


def test_operator_document_round_trip(bellman):
    doc = bellman.dumps()
    back = OperatorSpec.from_document(doc)
    X = random_symmetric(np.random.default_rng(1), 2, 10)
    np.testing.assert_array_equal(back(np.zeros((10, 2)), X), bellman(np.zeros((10, 2)), X))
    with pytest.raises(ArgumentError):
        OperatorSpec.from_document('{"form": "trace"}')
    with pytest.raises(ArgumentError):
        OperatorSpec.from_document("not json")
