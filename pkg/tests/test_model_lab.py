import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renormlab.kernels import Grid, GridField, gaussian, green, kernel_array, mollifier, periodic_convolution, sample
from renormlab.lab.chaos import OutsideCatalogue, catalogue, chaos_pairing, monte_carlo_pairing, wick_terms
from renormlab.lab.estimators import BPHZCharacterEstimator, ScalingExponentEstimator
from renormlab.lab.interpret import (
    Character, MissingCharacterValue, OffGrid, UnboundXiDot, bphz_character, bphz_characters, build_model,
    extract_root_negative, interpret_naive, recenter, renormalization_depth, renormalize_interpretation,
)
from renormlab.lab.noise import MCSpec, rescaled_test, sample_white_noise
from renormlab.symbols import DegreeParams, one, parse_symbol, poly, product, statistics, xi

P2 = DegreeParams.from_kappa(2, Fraction(1, 20))
G32 = Grid(32, 2)

CATALOGUE = ["Xi", "I(Xi)", "Xi*I(Xi)", "I(Xi)*I(Xi)", "Xi*I(Xi*I(Xi))", "X^[1,0]*I_[0,1](Xi)", "I_[1,0](Xi)",
             "X^[0,2]", "Xi*I(I_[1,0](Xi)*I_[1,0](Xi))"]


def _field(seed=0, eps=0.15, grid=G32):
    return sample_white_noise(grid, seed).mollified(eps)


def _sym(t):
    return parse_symbol(t, 2)


# ---------------------------------------------------------------- noise


def test_noise_site_statistics():
    g = Grid(64, 2)
    xi_ = sample_white_noise(g, 3).xi.values.ravel()
    n = xi_.size
    scaled = xi_ * math.sqrt(g.cell)
    assert abs(scaled.mean()) < 5 / math.sqrt(n)
    # variance of a sample variance of unit Gaussians is 2 / n
    assert abs(scaled.var() - 1) < 5 * math.sqrt(2 / n)


def test_noise_pairing_moments():
    phi = rescaled_test(G32, (0.5, 0.5), 0.25)
    norm2 = float(np.sum(phi * phi) * G32.cell)
    vals = np.array([sample_white_noise(G32, 11, j).pair(phi) for j in range(1000)])
    assert abs(vals.mean()) < 5 * math.sqrt(norm2 / 1000)
    assert abs(vals.var(ddof=1) / norm2 - 1) < 5 * math.sqrt(2 / 1000)


def test_noise_is_deterministic():
    a, b = sample_white_noise(G32, 4, 2), sample_white_noise(G32, 4, 2)
    assert a.xi.to_bytes() == b.xi.to_bytes()
    assert a.mollified(0.1).to_bytes() == b.mollified(0.1).to_bytes()
    assert not np.array_equal(a.xi.values, sample_white_noise(G32, 4, 3).xi.values)
    assert not np.array_equal(a.xi.values, sample_white_noise(G32, 5, 2).xi.values)


# ---------------------------------------------------------------- naive interpretation


def test_naive_examples():
    f = _field()
    assert np.array_equal(interpret_naive(one(), f).values, np.ones(G32.shape))
    K = green(2)
    cherry = interpret_naive(_sym("Xi*I(Xi)"), f).values
    assert np.allclose(cherry, f.values * periodic_convolution(f, K).values, rtol=0, atol=1e-12)


def test_pictured_tree_unfolds_as_iterated_integral():
    f = _field(1)
    K = green(2)
    X, Y = G32.coordinates()
    inner = X * periodic_convolution(f, K, (0, 1)).values * periodic_convolution(f, K, (1, 1)).values
    expected = f.values * periodic_convolution(f.like(inner), K).values
    got = interpret_naive(_sym("Xi*I(X^[1,0]*I_[0,1](Xi)*I_[1,1](Xi))"), f).values
    assert np.abs(got - expected).max() <= 1e-12 * max(1.0, np.abs(expected).max())


def test_xidot_needs_direction():
    with pytest.raises(UnboundXiDot):
        interpret_naive(_sym("XiD*I(Xi)"), _field())


@settings(max_examples=25)
@given(st.sampled_from(CATALOGUE), st.sampled_from(CATALOGUE))
def test_naive_model_is_multiplicative(a, b):
    f = _field(2)
    s, t = _sym(a), _sym(b)
    lhs = interpret_naive(product([s, t]), f).values
    rhs = interpret_naive(s, f).values * interpret_naive(t, f).values
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(rhs).max())


# ---------------------------------------------------------------- recentring


def test_recentred_monomials_are_exact():
    f = _field()
    ix = (5, 30)
    N, h = G32.N, G32.h
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    dx = ((i - ix[0] + N // 2) % N - N // 2) * h
    dy = ((j - ix[1] + N // 2) % N - N // 2) * h
    for k in [(1, 0), (0, 2), (2, 1)]:
        got = recenter(poly(k), ix, f, P2).values
        # the antipodal row and column have two minimal images; compare everywhere else
        away = (np.abs(dx) < 0.5) & (np.abs(dy) < 0.5)
        assert np.abs(got - dx ** k[0] * dy ** k[1])[away].max() <= 1e-15
        assert got[ix] == 0


def test_recentred_positive_planted_vanishes_at_base_point():
    f = _field()
    s = _sym("I(Xi)")
    assert P2.alpha0 + 2 > 0
    for x in [(0, 0), (7, 19)]:
        assert abs(recenter(s, x, f, P2).values[x]) <= 1e-12
    # I_[1,0](Xi) has negative degree: no subtraction, so the field is the plain convolution
    assert np.array_equal(recenter(_sym("I_[1,0](Xi)"), (3, 3), f, P2).values,
                          interpret_naive(_sym("I_[1,0](Xi)"), f).values)


def test_recenter_rejects_off_grid_points():
    with pytest.raises(OffGrid):
        recenter(xi(), (0.01, 0.0), _field(), P2)
    model = build_model([xi(), _sym("I(Xi)")], _field(), P2, points=[(0, 0), (16, 16)])
    assert set(model.fields) == {"Xi", "I(Xi)"} and set(model.fields["Xi"]) == {(0, 0), (16, 16)}


# ---------------------------------------------------------------- extraction and renormalization


def test_extraction_examples():
    ex = extract_root_negative(xi(), P2)
    assert [(e.sigma, e.remainder) for e in ex] == [(one(), xi()), (xi(), one())]
    cherry = _sym("Xi*I(Xi)")
    sigmas = {e.sigma for e in extract_root_negative(cherry, P2)}
    assert {cherry, xi(), one()} <= sigmas
    assert [e.trivial for e in extract_root_negative(poly((1, 1)), P2)] == [True]


def test_zero_character_gives_naive_model():
    f = _field(5)
    for t in CATALOGUE:
        s = _sym(t)
        assert np.array_equal(renormalize_interpretation(s, Character.zero(P2), f, P2).values,
                              interpret_naive(s, f).values)


def test_cherry_renormalization_is_a_constant_shift():
    f = _field(6)
    cherry = _sym("Xi*I(Xi)")
    ell = {"Xi*I(Xi)": 0.7, "Xi": 0.0}
    got = renormalize_interpretation(cherry, ell, f, P2).values
    assert np.abs(got - (interpret_naive(cherry, f).values - 0.7)).max() <= 1e-12


def test_missing_character_value_raises():
    with pytest.raises(MissingCharacterValue):
        renormalize_interpretation(_sym("Xi*I(Xi)"), Character({"Xi": 0.0}, P2), _field(), P2)


def test_recursion_depth_bounded_by_noise_count():
    for t in CATALOGUE + ["Xi*Xi*I(Xi)", "Xi*I(Xi)*I(Xi*I(Xi))"]:
        s = _sym(t)
        assert renormalization_depth(s, P2) <= statistics(s).n_xi


def test_character_domain_and_json(tmp_path):
    ch = Character({"Xi*I(Xi)": 1.25, "Xi": 0.0}, P2)
    path = tmp_path / "ch.json"
    path.write_text(json.dumps(ch.to_json()))
    assert Character.load(path, P2).values == ch.values
    with pytest.raises(ValueError):
        Character({"I(Xi)": 1.0}, P2)


# ---------------------------------------------------------------- characters by Monte Carlo


def _cherry_oracle(grid, eps):
    """E[xi_eps(0) (K * xi_eps)(0)] = h^d sum_u K(u) C(u), C(u) = h^d sum_w rho(u + w) rho(w), summed directly."""
    rho = sample(mollifier(eps, 2), grid)
    K = kernel_array(green(2), grid)
    C = np.zeros(grid.shape)
    for a in range(grid.N):
        for b in range(grid.N):
            if rho[a, b]:
                C += rho[a, b] * np.roll(np.roll(rho, -a, axis=0), -b, axis=1)
    C *= grid.cell
    return float(np.sum(K * C) * grid.cell)


def test_noise_character_vanishes():
    v, e = bphz_character(xi(), 0.15, MCSpec(50, 1), G32, P2)
    assert abs(v) <= 3 * e


def test_cherry_character_matches_deterministic_pairing():
    v, e = bphz_character(_sym("Xi*I(Xi)"), 0.15, MCSpec(800, 2), G32, P2)
    oracle = _cherry_oracle(G32, 0.15)
    assert abs(v - oracle) <= 3 * e
    assert e < 0.1 * abs(oracle)


def test_odd_trees_have_vanishing_character():
    tau = _sym("Xi*Xi*I(Xi)")
    ch = bphz_characters([tau], 0.15, MCSpec(100, 3), G32, P2)
    assert abs(ch[tau]) <= 3 * ch.stderr[tau]


def test_bphz_property_on_fresh_samples():
    tau = _sym("Xi*I(Xi)")
    ch = bphz_characters([tau], 0.15, MCSpec(150, 4), G32, P2)
    fresh = [renormalize_interpretation(tau, ch, sample_white_noise(G32, 99, j).mollified(0.15), P2).values.mean()
             for j in range(150)]
    se = math.hypot(np.std(fresh, ddof=1) / math.sqrt(150), ch.stderr[tau])
    assert abs(np.mean(fresh)) <= 3 * se


def test_character_estimator_wrapper():
    est = BPHZCharacterEstimator(P2, eps=0.15, grid=G32, samples=40, seed=1)
    assert est.get_params()["samples"] == 40
    est.set_params(samples=30)
    vals = est.fit(["Xi*I(Xi)"]).transform(["Xi*I(Xi)", "Xi", "I(Xi)"])
    assert vals[2] == 0.0 and vals[0] > 0
    with pytest.raises(ValueError):
        est.set_params(bogus=1)
    assert "BPHZCharacterEstimator(" in repr(est)


def test_scaling_estimator_wrapper():
    lams = [2.0 ** -j for j in range(1, 7)]
    est = ScalingExponentEstimator().fit(lams, [[lam ** 3] for lam in lams])
    assert est.exponent_ == pytest.approx(1.5, abs=1e-12)
    assert est.predict([0.5])[0] == pytest.approx(0.5 ** 1.5, rel=1e-12)


# ---------------------------------------------------------------- chaos


def test_tripod_chaos_structure():
    tripod = catalogue(2)["tripod"]
    W = wick_terms(tripod)
    assert W[2] == []
    assert len(W[1]) == 2 and sorted(t.coefficient for t in W[1]) == [1, 2]
    assert [t.coefficient for t in W[3]] == [1]


def test_cherry_chaos_structure():
    W = wick_terms(catalogue(2)["cherry"])
    assert W[1] == [] and len(W[2]) == 1 and len(W[0]) == 1


def test_chaos_catalogue_boundary():
    with pytest.raises(OutsideCatalogue):
        chaos_pairing("Xi*Xi*Xi*I(Xi)", 0.2, None, Grid(16, 2), (0.0, 0.0), 0.25)


def test_cherry_ito_pairing_matches_monte_carlo():
    g = Grid(16, 2)
    rep = chaos_pairing("cherry", 0.25, None, g, (0.5, 0.5), 0.4)
    mc = monte_carlo_pairing("cherry", 0.25, None, g, (0.5, 0.5), 0.4, MCSpec(400, 5))
    assert abs(rep.total - mc["mean_square"]) <= 3 * mc["stderr"]


def test_tripod_chaos_orders_are_orthogonal():
    g = Grid(16, 2)
    rep = chaos_pairing("tripod", 0.25, None, g, (0.5, 0.5), 0.4)
    mc = monte_carlo_pairing("tripod", 0.25, None, g, (0.5, 0.5), 0.4, MCSpec(300, 6), first_order=rep.first_order)
    assert abs(mc["cross_covariance"]) <= 3 * mc["cross_stderr"]
    assert abs(rep.total - mc["mean_square"]) <= 3 * mc["stderr"]


def test_chaos_noise_entry_is_plain_l2_norm():
    g = Grid(16, 2)
    rep = chaos_pairing("noise", 0.25, None, g, (0.5, 0.5), 0.4)
    phi = rescaled_test(g, (0.5, 0.5), 0.4)
    rho = sample(mollifier(0.25, 2), g)
    # the bump is even, so correlating with it is convolving with it
    smoothed = periodic_convolution(GridField(phi), np.fft.fftn(rho) * g.cell)
    assert rep.orders[1] == pytest.approx(float(np.sum(smoothed.values ** 2) * g.cell), rel=1e-9)
