import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fnpotential.errors import ArgumentError
from fnpotential.grid import Ball, Grid, GridField, lp_ball_average
from fnpotential.spaces import (
    _inside_centres,
    rearranged_bound,
    hardy_littlewood_margins,
    lorentz_functional,
    lorentz_n1_functional,
    marcinkiewicz_functional,
    marcinkiewicz_holder,
    maximal_rearrangement,
    morrey_functional,
    oscillation_modulus,
    probe_radii,
    rearrange,
    refinement_trend,
)


def indicator(cells=32, radius=0.5):
    g = Grid.square(cells)
    return GridField.from_function(g, lambda p: (np.linalg.norm(p, axis=1) < radius).astype(float))


def radial(cells, a, disc=True):
    g = Grid.square(cells)

    def f(p):
        r = np.linalg.norm(p, axis=1)
        return np.where((r < 1) | (not disc), r ** (-a), 0.0)

    return GridField.from_function(g, f)


def random_field(seed, cells=32):
    rng = np.random.default_rng(seed)
    g = Grid.square(cells)
    return GridField(g, rng.standard_normal(g.cells) * rng.integers(0, 2, g.cells))


def test_indicator_rearrangement():
    f = indicator()
    r = rearrange(f)
    m = np.count_nonzero(f.values) * f.grid.cell_volume
    s = np.array([0.0, m / 2, m - 1e-12, m, 2 * m])
    np.testing.assert_array_equal(r.star(s), [1, 1, 1, 0, 0])
    for t in (m / 3, m, 1.5 * m, 3.9):
        assert maximal_rearrangement(r, t) == pytest.approx(min(1.0, m / t), rel=1e-12)


def test_sign_does_not_matter():
    f = random_field(1)
    np.testing.assert_array_equal(rearrange(f).values, rearrange(f.abs()).values)


def test_star_star_dominates_star():
    r = rearrange(random_field(2))
    s = np.linspace(1e-3, 4, 200)
    assert np.all(r.star_star(s) >= r.star(s) - 1e-15)


def test_constant_star_star():
    g = Grid.square(16)
    r = rearrange(GridField.constant(g, 3.0))
    np.testing.assert_allclose(r.star_star(np.linspace(0.01, 4, 20)), 3.0, rtol=1e-12)


def test_radial_rearrangement_closed_form():
    f = radial(256, 0.5)
    r, h = rearrange(f), f.grid.h
    # lattice shells carry up to 8 cells, so at s ~ 12 h^2 one step is ~11%;
    # from 20 h^2 on the steps stay under 5%
    s = np.geomspace(20 * h * h, 2.5, 400)
    rel = np.abs(r.star(s) / (s / np.pi) ** -0.25 - 1)
    assert rel.max() <= 0.05


def test_lorentz_indicator_value():
    f = indicator()
    m = np.count_nonzero(f.values) * f.grid.cell_volume
    for q, gamma in [(2, 1), (3, 2), (1.5, 0.5)]:
        assert lorentz_functional(f, q, gamma).value == pytest.approx(m ** (gamma / q) / gamma, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10).map(lambda c: c * 1.0))
def test_lorentz_scaling(seed, c):
    f = random_field(seed, 16)
    base = lorentz_functional(f, 2.5, 1.5).value
    assert lorentz_functional(f * c, 2.5, 1.5).value == pytest.approx(c**1.5 * base, rel=1e-10)
    assert lorentz_functional(f * -c, 2.5, 1.5).value == pytest.approx(c**1.5 * base, rel=1e-10)


def test_power_change_of_variables():
    # lambda -> lambda^(1/p) turns L(q/p, gamma/p) of |g|^p into p times L(q, gamma) of g
    q, gamma, p = 4.0, 2.0, 2.0
    for seed in range(20):
        f = random_field(seed)
        lhs = lorentz_functional(f.power(p), q / p, gamma / p).value
        rhs = p * lorentz_functional(f, q, gamma).value
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_marcinkiewicz_indicator_and_monotone():
    f = indicator()
    m = np.count_nonzero(f.values) * f.grid.cell_volume
    assert marcinkiewicz_functional(f, 2).value == pytest.approx(m, rel=1e-12)
    g = random_field(3).abs()
    assert marcinkiewicz_functional(g * 0.5, 2).value <= marcinkiewicz_functional(g, 2).value


def test_marcinkiewicz_refinement_stable():
    vals = [marcinkiewicz_functional(radial(c, 0.5, disc=False), 4).value for c in (64, 128, 256)]
    assert max(vals) / min(vals) - 1 <= 0.1


def test_lorentz_n1():
    f = indicator()
    m = np.count_nonzero(f.values) * f.grid.cell_volume
    assert lorentz_n1_functional(f, 2).value == pytest.approx(m**0.5, rel=1e-12)
    for seed in range(5):
        g = random_field(seed)
        assert lorentz_n1_functional(g, 2).value == pytest.approx(lorentz_functional(g, 2, 1).value, abs=1e-12)


def test_lorentz_n1_borderline_witness_grows():
    from fnpotential.expr import Expression
    from fnpotential.harness import witness_expression

    vals, hs = [], []
    for c in (64, 128, 256):
        g = Grid.square(c)
        f = GridField.from_function(g, Expression(witness_expression("lorentz-borderline"), 2))
        vals.append(lorentz_n1_functional(f, 2).value)
        hs.append(g.h)
    assert vals[0] < vals[1] < vals[2]
    trend = refinement_trend(hs, vals)
    assert trend["loglog_slope"] > 0


def test_lorentz_radial_quadrature_oracle():
    # |x|^-1/2 on the unit disc: |{g > lam}| = pi min(1, lam^-4)
    f = radial(256, 0.5)

    def integrand(lam):
        return (lam**2 * np.pi * min(1.0, lam**-4)) ** 0.5 / lam

    oracle = integrate.quad(integrand, 0, 1)[0] + integrate.quad(integrand, 1, np.inf)[0]
    assert lorentz_functional(f, 2, 1).value == pytest.approx(oracle, rel=0.05)


def test_morrey_s0_matches_probe_max():
    f = random_field(4)
    q = 2.0
    best = 0.0
    for rho in probe_radii(f.grid):
        for idx in _inside_centres(f.grid, rho, 4):
            best = max(best, lp_ball_average(f, Ball(tuple(f.grid.center_of(idx)), rho), q))
    assert morrey_functional(f, q, 0).value ** (1 / q) == pytest.approx(best, abs=1e-12)


def test_morrey_constant():
    g = Grid.square(32)
    rep = morrey_functional(GridField.constant(g, 2.0), 2, 1.5)
    fits = max(rho for rho in probe_radii(g) if len(_inside_centres(g, rho, 4)))
    assert rep.value == pytest.approx(4.0 * fits**1.5, rel=1e-12)
    assert rep.attaining_ball is not None


def test_morrey_radial_power():
    # rho^s mean_{B_rho(0)} |x|^-s = 2/(2-s) for every rho
    vals = [morrey_functional(radial(c, 0.5, disc=False), 2, 1).value for c in (64, 128, 256)]
    assert max(vals) / min(vals) - 1 <= 0.1
    assert vals[-1] == pytest.approx(2.0, rel=0.1)


def test_morrey_rejects_bad_exponent():
    with pytest.raises(ArgumentError):
        morrey_functional(indicator(), 2, 3)


def test_oscillation_constant_and_sign():
    g = Grid.square(64)
    assert all(w == 0 for _, w in oscillation_modulus(GridField.constant(g, 1.0), [0.125, 0.5]))
    sgn = GridField.from_function(g, lambda p: np.sign(p[:, 0]))
    vals = [w for _, w in oscillation_modulus(sgn, [0.0625, 0.125, 0.25, 0.5])]
    assert min(vals) >= 0.5


def test_oscillation_linear_function():
    g = Grid.square(128)
    f = GridField.from_function(g, lambda p: p[:, 0])
    out = oscillation_modulus(f, [0.125, 0.25, 0.5])
    for R, w in out:
        assert w == pytest.approx(4 * R / (3 * np.pi), rel=0.05)
    assert np.all(np.diff([w for _, w in out]) >= 0)


def test_hardy_littlewood_margins_nonnegative():
    f = random_field(5).abs()
    balls = [Ball(tuple(c), r) for c in [(0, 0), (0.3, -0.2)] for r in (0.125, 0.25, 0.5)]
    assert np.all(hardy_littlewood_margins(f, balls) >= 0)


def test_marcinkiewicz_holder_on_weak_witness():
    g = Grid.square(128)
    f = GridField.from_function(g, lambda p: 1 / np.linalg.norm(p, axis=1))
    for r in (0.125, 0.25, 0.5):
        lhs, rhs = marcinkiewicz_holder(f, Ball((0.0, 0.0), r), 1.5)
        assert lhs <= 1.05 * rhs


def test_rearranged_bound_constant_field():
    # g = c^p: the bound is c r exactly as long as omega_n r^n <= |box|
    g = Grid.square(32)
    r = rearrange(GridField.constant(g, 2.0**1.5))
    assert rearranged_bound(r, 1.5, 0.5, 2) == pytest.approx(2.0 * 0.5, rel=1e-10)


def test_norm_report_json():
    rep = morrey_functional(indicator(), 2, 1)
    d = rep.to_dict()
    assert set(d) >= {"space", "params", "value", "probe_config", "attaining_ball"}
