import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormlab.basis import BudgetExceeded, Rule, NodeType, generate_basis, node_conforms, pam_rule, phi4_rule, \
    subtrees_required, basis_records
from renormlab.symbols import (
    PLANTED, POLY, XI, DegreeParams, SymbolSyntaxError, canonicalize, degree, degree_value, extended_basis,
    malliavin_D, one, parse_symbol, planted, poly, preorder_cmp, product, replace_one_noise, sort_symbols,
    Statistics, statistics, xi, xi_dot, is_polynomial,
)
from strategies import noisy_symbols, symbols

P2 = DegreeParams.from_kappa(2, Fraction(1, 20))


# ---------------------------------------------------------------- grammar


def test_parse_examples():
    s = parse_symbol("Xi*I(Xi)", 2)
    assert s is product([xi(), planted(xi(), (0, 0))])
    assert parse_symbol("X^[2,1]*X^[0,1]", 2) is poly((2, 2))
    t = parse_symbol("I_[1,0](Xi*I(Xi))", 2)
    assert t.kind == PLANTED and t.k == (1, 0) and t.children[0] is s
    assert parse_symbol("1", 2) is one()


@pytest.mark.parametrize("text", ["Xi*", "I(Xi", "X^[1,0", "Foo", "I_[1](Xi)*", "Xi**Xi", ""])
def test_parse_errors_carry_position(text):
    with pytest.raises(SymbolSyntaxError) as err:
        parse_symbol(text, 2)
    assert "position" in str(err.value)


def test_multiindex_length_checked():
    with pytest.raises(SymbolSyntaxError):
        parse_symbol("X^[1,0,0]", 2)


@given(symbols(with_xidot=True))
def test_print_parse_fixed_point(s):
    assert parse_symbol(s.text, 2) is s
    assert parse_symbol(parse_symbol(s.text, 2).text, 2).text == s.text


@given(symbols(with_xidot=True, max_leaves=10))
def test_canonicalize_idempotent(s):
    c = canonicalize(s)
    assert canonicalize(c) is c
    assert c is s  # constructors already return canonical forms


def test_products_are_flat_and_merge_monomials():
    s = product([product([xi(), poly((1, 0))]), product([poly((0, 2)), one(), xi()])])
    facs = s.factors()
    assert all(f.kind != "product" for f in facs)
    assert [f for f in facs if f.kind == POLY] == [poly((1, 2))]
    assert one() not in facs


# ---------------------------------------------------------------- degree and statistics


def test_degree_examples():
    assert degree_value(poly((2, 1)), P2) == 3
    d3 = DegreeParams(3, Fraction(-3, 2))
    assert degree_value(parse_symbol("Xi*I(Xi)", d3), d3) == -1
    assert degree_value(one(), P2) == 0
    assert str(degree(parse_symbol("Xi*I(Xi)", 2), P2)) == "2*a0+2"


def test_degree_params_validation():
    with pytest.raises(ValueError):
        DegreeParams(2, Fraction(-1, 2))
    assert DegreeParams.from_kappa(2, Fraction(1, 20)).alpha0 == Fraction(-21, 20)


@given(noisy_symbols(), noisy_symbols())
def test_degree_additive_over_products(a, b):
    assert degree(product([a, b]), P2) == degree(a, P2) + degree(b, P2)


@given(noisy_symbols(), st.tuples(st.integers(0, 3), st.integers(0, 3)))
def test_planting_shifts_degree(s, k):
    assert degree_value(planted(s, k), P2) - degree_value(s, P2) == 2 - sum(k)


def test_statistics_examples():
    assert statistics(parse_symbol("Xi*I(Xi)", 2)) == Statistics(2, 0, 1)
    pictured = parse_symbol("Xi*I(X^[1,0]*I_[0,1](Xi)*I_[1,1](Xi))", 2)
    st_ = statistics(pictured)
    assert (st_.n_xi, st_.n_xidot, st_.n_edges) == (3, 0, 3)
    assert statistics(xi_dot()) == Statistics(0, 1, 0)


# ---------------------------------------------------------------- preorder


def test_preorder_examples():
    a, b, c = (parse_symbol(t, 2) for t in ("Xi", "Xi*I(Xi)", "Xi*I(I(Xi))"))
    assert preorder_cmp(a, b, P2) == -1
    assert preorder_cmp(b, c, P2) == -1
    assert preorder_cmp(c, c, P2) == 0


@given(noisy_symbols(), noisy_symbols())
def test_preorder_antisymmetric(a, b):
    assert preorder_cmp(a, b, P2) == -preorder_cmp(b, a, P2)
    assert (preorder_cmp(a, b, P2) == 0) == (a is b)


@given(st.lists(noisy_symbols(), min_size=3, max_size=3))
def test_preorder_transitive(trio):
    a, b, c = trio
    if preorder_cmp(a, b, P2) <= 0 and preorder_cmp(b, c, P2) <= 0:
        assert preorder_cmp(a, c, P2) <= 0


# ---------------------------------------------------------------- derivative


def _lc_mul(p, q):
    out = {}
    for s, a in p.items():
        for t, b in q.items():
            u = product([s, t])
            out[u] = out.get(u, 0) + a * b
    return {s: c for s, c in out.items() if c}


def _lc_add(p, q):
    out = dict(p)
    for s, c in q.items():
        out[s] = out.get(s, 0) + c
    return {s: c for s, c in out.items() if c}


def test_derivative_examples():
    assert malliavin_D(xi()) == {xi_dot(): 1}
    assert malliavin_D(poly((1, 2))) == {}
    tau = parse_symbol("Xi*I(Xi)*I(Xi)", 2)
    assert malliavin_D(tau) == {parse_symbol("XiD*I(Xi)*I(Xi)", 2): 1, parse_symbol("Xi*I(Xi)*I(XiD)", 2): 2}


def test_derivative_rejects_xidot():
    with pytest.raises(ValueError):
        malliavin_D(parse_symbol("XiD*I(Xi)", 2))


@given(noisy_symbols(), noisy_symbols())
def test_derivative_is_a_derivation(a, b):
    lhs = malliavin_D(product([a, b]))
    rhs = _lc_add(_lc_mul(malliavin_D(a), {b: 1}), _lc_mul({a: 1}, malliavin_D(b)))
    assert lhs == rhs


def test_derivative_two_sided_numeric():
    """Evaluate both sides of the Leibniz rule on a grid with the derivative noise bound to h."""
    from renormlab.kernels import Grid
    from renormlab.lab.checks import random_direction
    from renormlab.lab.interpret import interpret_naive
    from renormlab.lab.noise import sample_white_noise

    g = Grid(32, 2)
    xi_f = sample_white_noise(g, 3).mollified(0.1)
    h = random_direction(g, 5)
    a, b = parse_symbol("Xi*I(Xi)", 2), parse_symbol("I_[1,0](Xi)", 2)

    def ev(lc):
        return sum(c * interpret_naive(s, xi_f, h).values for s, c in lc.items())

    lhs = ev(malliavin_D(product([a, b])))
    rhs = ev(malliavin_D(a)) * interpret_naive(b, xi_f).values + interpret_naive(a, xi_f).values * ev(malliavin_D(b))
    assert abs(lhs - rhs).max() <= 1e-9 * (1 + abs(lhs).max())


# ---------------------------------------------------------------- extended basis


def _orbit_oracle(s):
    """Replace each noise leaf in turn, rebuilding from the tree by hand, then dedup."""
    def walk(t):
        if t.kind == XI:
            return [xi_dot()]
        if t.kind == PLANTED:
            return [planted(c, t.k) for c in walk(t.children[0])]
        if t.kind == "product":
            facs = list(t.factors())
            out = []
            for i, f in enumerate(facs):
                out += [product(facs[:i] + [g] + facs[i + 1:]) for g in walk(f)]
            return out
        return []
    return set(walk(s))


def test_extended_basis_examples():
    assert extended_basis([xi()]) == [xi_dot()]
    assert extended_basis([poly((1, 0))]) == []
    got = set(extended_basis([parse_symbol("Xi*I(Xi)*I(Xi)", 2)]))
    assert got == {parse_symbol("XiD*I(Xi)*I(Xi)", 2), parse_symbol("Xi*I(Xi)*I(XiD)", 2)}


@given(noisy_symbols(max_leaves=8))
def test_extended_basis_matches_orbits(s):
    assert set(extended_basis([s])) == _orbit_oracle(s)
    assert len(replace_one_noise(s)) == statistics(s).n_xi


# ---------------------------------------------------------------- bases


def _pam_count_oracle(alpha0, d=2, gmax=2):
    """Chains of n nodes, each Xi times a monomial of total degree t_i: degree n a0 + 2(n-1) + sum t_i."""
    total, n = 0, 1
    while n * alpha0 + 2 * (n - 1) < gmax:
        budget = gmax - n * alpha0 - 2 * (n - 1)
        for ts in itertools.product(range(int(budget) + 1), repeat=n):
            if sum(ts) < budget:
                c = 1
                for t in ts:
                    c *= t + 1 if d == 2 else 1
                total += c
        n += 1
    return total


def test_pam_basis_matches_oracle():
    B = generate_basis(pam_rule(2), P2)
    assert len(B) == _pam_count_oracle(P2.alpha0) == 33
    for t in ("Xi", "Xi*I(Xi)", "Xi*I(Xi*I(Xi))"):
        assert parse_symbol(t, 2) in B
    assert all(statistics(s).n_xi >= 1 or is_polynomial(s) for s in B)
    assert all(node_conforms(s, pam_rule(2), P2) for s in B)
    assert B == sort_symbols(B, P2)
    for s in B:
        for sub in subtrees_required(s):
            assert sub in B


def test_phi4_basis_golden():
    p = DegreeParams.from_kappa(3, Fraction(1, 20))
    B = generate_basis(phi4_rule(2), p)
    assert [s.text for s in B] == ["Xi", "I(Xi)", "I(Xi)*I(Xi)", "I(Xi)*I(Xi)*I(Xi)"]


def test_cutoff_below_alpha0_is_empty():
    assert generate_basis(pam_rule(P2.alpha0), P2) == []


def test_non_subcritical_rule_hits_budget():
    bad = Rule("bad", (NodeType(2, 0, 2, 0),), gamma_max=Fraction(2), node_budget=200)
    with pytest.raises(BudgetExceeded):
        generate_basis(bad, DegreeParams(2, Fraction(-3)))


def test_basis_records_shape():
    recs = basis_records(generate_basis(pam_rule(2), P2)[:2], P2)
    assert recs[0] == {"symbol": "Xi", "degree": "-21/20", "n_xi": 1, "n_edges": 0}
