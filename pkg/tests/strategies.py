"""Hypothesis strategies for random symbols and graphs."""

from fractions import Fraction

from hypothesis import strategies as st

from renormlab.symbols import planted, poly, product, xi, xi_dot

multi = st.tuples(st.integers(0, 2), st.integers(0, 2))


def symbols(with_xidot: bool = False, max_leaves: int = 6):
    leaves = [st.just(xi()), multi.map(poly)]
    if with_xidot:
        leaves.append(st.just(xi_dot()))
    base = st.one_of(*leaves)

    def extend(children):
        return st.one_of(
            st.tuples(children, multi).map(lambda p: planted(p[0], p[1])),
            st.lists(children, min_size=2, max_size=3).map(product),
        )

    return st.recursive(base, extend, max_leaves=max_leaves)


def noisy_symbols(**kw):
    """Symbols with at least one noise, so planted edges and derivatives are meaningful."""
    return st.tuples(symbols(**kw), st.just(xi())).map(product)


fractions = st.builds(Fraction, st.integers(-40, 40), st.sampled_from([1, 2, 3, 4, 6, 8]))
