import math
from fractions import Fraction

import numpy as np
import pytest
import sympy

from renormlab.kernels import Grid, green, periodic_convolution
from renormlab.lab.checks import (
    DegenerateGrid, cylinder, divergence_demo, dyadic_scales, fit_power_law, increment_expectation,
    malliavin_identity_check, poincare_check, pointed_norm_archetype, polarization_nodes, polynomial_jet,
    polynomial_pairings, random_direction, scaling_fit, sine_jet, symbol_pairings,
)
from renormlab.lab.interpret import ToleranceExceeded
from renormlab.lab.noise import MCSpec, profile_moment, rescaled_test, sample_white_noise
from renormlab.symbols import DegreeParams, parse_symbol

P2 = DegreeParams.from_kappa(2, Fraction(1, 20))


# ---------------------------------------------------------------- fits


def test_power_law_fit_recovers_exact_slope():
    s = [0.5, 0.25, 0.125, 0.0625]
    fit = fit_power_law(s, [3 * x ** 1.7 for x in s])
    assert fit.slope == pytest.approx(1.7, abs=1e-12) and fit.contains(1.7)
    assert math.exp(fit.intercept) == pytest.approx(3, rel=1e-12)


def test_power_law_fit_rejects_degenerate_grids():
    with pytest.raises(DegenerateGrid):
        fit_power_law([0.5], [1.0])
    with pytest.raises(DegenerateGrid):
        fit_power_law([0.5, 0.25], [1.0, -1.0])
    with pytest.raises(DegenerateGrid):
        scaling_fit([0.5, 0.4], [[1.0], [2.0]])


def test_weighted_fit_interval_covers_noisy_truth():
    rng = np.random.default_rng(0)
    s = np.array(dyadic_scales(1, 6))
    hits = 0
    for _ in range(200):
        err = 0.05 * s ** -1
        vals = s ** -1 + err * rng.standard_normal(s.size)
        hits += fit_power_law(s, vals, err).contains(-1.0)
    assert hits >= 180


def test_polynomial_scaling_is_exact():
    lams = dyadic_scales(1, 6)
    for k in [(1, 1), (2, 0), (0, 2)]:
        fit = scaling_fit(lams, polynomial_pairings(k, lams))
        assert abs(fit.slope - sum(k)) <= 1e-12


def test_profile_moments_match_symbolic_integration():
    # the profile is exp-truncation times the bump; check its mass and first moment symbolically in d = 1
    x = sympy.symbols("x", real=True)
    poly = 1 + x + x ** 2 / 2 + x ** 3 / 6 + x ** 4 / 24
    bump = sympy.exp(-1 / (1 - x ** 2))
    mass = sympy.Integral(poly * bump, (x, -1, 1)).evalf(30)
    first = sympy.Integral(x * poly * bump, (x, -1, 1)).evalf(30)
    assert profile_moment((0,)) == pytest.approx(1.0, abs=1e-12)
    assert profile_moment((1,)) == pytest.approx(float(first / mass), rel=1e-10)


def test_symbol_pairings_zero_character_path():
    g = Grid(32, 2)
    lams = [0.25, 0.125]
    a = symbol_pairings(parse_symbol("Xi", 2), g, lams, MCSpec(3, 0), P2, eps=None, per_dim=1)
    assert len(a) == 2 and all(len(v) == 3 for v in a)
    assert a == symbol_pairings(parse_symbol("Xi", 2), g, lams, MCSpec(3, 0), P2, eps=None, per_dim=1)


# ---------------------------------------------------------------- increments


def test_increment_expectation_matches_monte_carlo():
    g = Grid(32, 2)
    offsets = [1, 2, 4]
    exact = increment_expectation(g, offsets, eps=0.1)
    K = green(2)
    samples = {o: [] for o in offsets}
    for j in range(200):
        f = periodic_convolution(sample_white_noise(g, 8, j).mollified(0.1), K).values
        for o in offsets:
            samples[o].append(float(np.mean((np.roll(f, -o, axis=0) - f) ** 2)))
    for o, e in zip(offsets, exact):
        m = np.mean(samples[o])
        assert abs(m - e) <= 4 * np.std(samples[o], ddof=1) / math.sqrt(200)


# ---------------------------------------------------------------- divergence


def test_divergence_small_grid():
    rep = divergence_demo(1.0, (0.2, 0.1, 0.05), N=128)
    assert rep.fit.slope == pytest.approx(1.0, abs=0.15)
    assert all(a < b for a, b in zip(rep.tadpole, rep.tadpole[1:]))
    assert len(rep.rows()) == 3
    with pytest.raises(ValueError):
        divergence_demo(2.5)


def test_divergence_vanishes_for_small_beta():
    rep = divergence_demo(0.05, (0.2, 0.1, 0.05), N=128)
    assert abs(rep.fit.slope) < 0.1


# ---------------------------------------------------------------- Poincare


def test_poincare_equality_for_linear_functional():
    g = Grid(16, 2)
    phi = rescaled_test(g, (0.5, 0.5), 0.3)
    rep = poincare_check("linear", [phi], g, MCSpec(2000, 1))
    norm2 = float(np.sum(phi * phi) * g.cell)
    assert rep.energy == pytest.approx(norm2, rel=1e-12)
    assert rep.variance == pytest.approx(norm2, rel=0.1)
    assert rep.holds


def test_poincare_square_matches_gaussian_moments():
    g = Grid(16, 2)
    phi = rescaled_test(g, (0.5, 0.5), 0.3)
    phi = phi / math.sqrt(float(np.sum(phi * phi) * g.cell))
    rep = poincare_check("square", [phi], g, MCSpec(4000, 2))
    assert rep.variance == pytest.approx(2.0, rel=0.15)
    assert rep.energy == pytest.approx(4.0, rel=0.1)
    assert rep.holds


def test_poincare_tolerance_and_names():
    g = Grid(16, 2)
    phi = rescaled_test(g, (0.5, 0.5), 0.3)
    with pytest.raises(ToleranceExceeded):
        poincare_check("cosine", [phi], g, MCSpec(20, 0, tolerance=1e-9))
    with pytest.raises(KeyError):
        cylinder("cubic")


# ---------------------------------------------------------------- Malliavin


def test_polarization_nodes_differentiate_polynomials_exactly():
    t = sympy.symbols("t")
    for n in range(1, 6):
        nodes, weights = polarization_nodes(n)
        for deg in range(n + 1):
            p = sum(sympy.Rational(c + 1, c + 2) * t ** c for c in range(deg + 1))
            approx = sum(sympy.Rational(w.numerator, w.denominator) * p.subs(t, sympy.Rational(x.numerator, x.denominator))
                         for x, w in zip(nodes, weights))
            assert approx == sympy.diff(p, t).subs(t, 0)


@pytest.mark.parametrize("text", ["Xi", "Xi*I(Xi)", "Xi*I(Xi)*I(Xi)", "I(Xi)*I(Xi)*I(Xi)", "Xi*I(Xi*I(Xi))"])
def test_malliavin_identity(text):
    g = Grid(32, 2)
    xi = sample_white_noise(g, 7).xi
    h = random_direction(g, 3)
    assert malliavin_identity_check(parse_symbol(text, 2), h, 0.1, xi) <= 1e-8


def test_malliavin_rejects_xidot():
    g = Grid(16, 2)
    with pytest.raises(ValueError):
        malliavin_identity_check(parse_symbol("XiD", 2), random_direction(g, 1), None, sample_white_noise(g, 1).xi)


def test_random_direction_is_normalized():
    h = random_direction(Grid(32, 2), 5)
    assert h.pair(h.values) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------- pointed norms


def test_polynomial_pointed_norm_vanishes_exactly():
    jet = polynomial_jet({(3, 0): Fraction(1, 3), (1, 2): Fraction(-2), (0, 1): Fraction(5)})
    rep = pointed_norm_archetype(jet, (Fraction(1, 4), Fraction(1, 8)), 2, 4, lambdas=[0.5, 0.25], resolution=4,
                                 global_resolution=3, exact=True)
    assert rep.vanishes


def test_sine_local_improvement_exponent():
    rep = pointed_norm_archetype(sine_jet(2.0, (0.3, 0.7)), (0.1, 0.2), 2, 4, lambdas=dyadic_scales(1, 5))
    assert abs(rep.improvement.slope - 2) <= 0.3
    # discrete Hoelder: ||.||_2 <= vol^(1/2) ||.||_inf on the same ball
    for lp, sup, vol in zip(rep.local_p, rep.local_sup, rep.ball_volume):
        assert lp <= math.sqrt(vol) * sup * (1 + 1e-12)
    assert rep.global_constant > 0


def test_pointed_norm_requires_gamma_below_nu():
    with pytest.raises(ValueError):
        pointed_norm_archetype(sine_jet(), (0.0, 0.0), 3, 3)
