"""Symbolic integrands attached to a Feynman graph.

An integrand is a finite sum of terms.  Each term is a rational coefficient
times a product of factors evaluated at graph vertices:

* ``Kern``  -- ``d^k K(x_p - x_q)``, owned by the graph edge it came from,
  optionally restricted to one dyadic scale slice;
* ``Mono``  -- ``(x_p - x_q)^k``, owned by the subgraph whose Taylor
  subtraction produced it;
* ``Test``  -- ``d^k phi(x_p)`` for a named test function.

Integrated variables are the internal vertices of the graph.  Text form::

    integrand := "(integrand" term* ")"
    term      := "(term" rational factor* ")"
    factor    := "(K" edge kernel deriv var var scale ")"
               | "(M" "[" edges "]" var var deriv ")"
               | "(T" name var deriv ")"
    deriv     := "[" int ("," int)* "]"
    scale     := "*" | int
"""

from __future__ import annotations

import itertools
import math
import re
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

from .graphs import FeynGraph, SubGraph, omega

try:  # exact rationals in C when available, same semantics as Fraction
    from gmpy2 import mpq as Rational
except ImportError:  # pragma: no cover
    Rational = Fraction


class Kern(NamedTuple):
    owner: int
    kernel: str
    deriv: tuple
    p: int
    q: int
    scale: int | None = None

    def key(self):
        return (0, self.owner, self.kernel, -10**9 if self.scale is None else self.scale, self.p, self.q, self.deriv)


class Mono(NamedTuple):
    owner: tuple
    p: int
    q: int
    power: tuple

    def key(self):
        return (1, self.owner, self.p, self.q, self.power)


class Test(NamedTuple):
    name: str
    p: int
    deriv: tuple

    def key(self):
        return (2, self.name, self.p, self.deriv)


_RANK = {Kern: 0, Mono: 1, Test: 2}
Factor = Kern | Mono | Test
Term = tuple  # sorted tuple of factors


def _fkey(f):
    # same-class factors compare as plain tuples; an edge occurs once per term
    return (_RANK[f.__class__], f)


def _zero(d):
    return (0,) * d


def _bump(k, i, by=1):
    k = list(k)
    k[i] += by
    return tuple(k)


def _canonical_term(factors: Iterable[Factor]) -> tuple[int, Term] | None:
    """Merge monomials, orient them p < q, drop trivial ones.

    Returns (sign, term) or None when the term vanishes identically.
    """
    factors = tuple(factors)
    if not any(f.__class__ is Mono for f in factors):
        return 1, tuple(sorted(factors, key=_fkey))
    sign = 1
    monos: dict[tuple, list[int]] = {}
    rest = []
    for f in factors:
        if isinstance(f, Mono):
            p, q, power = f.p, f.q, f.power
            if p == q:
                if any(power):
                    return None
                continue
            if p > q:
                p, q = q, p
                if sum(power) % 2:
                    sign = -sign
            key = (f.owner, p, q)
            acc = monos.setdefault(key, [0] * len(power))
            for i, v in enumerate(power):
                acc[i] += v
        else:
            rest.append(f)
    for (owner, p, q), power in monos.items():
        if any(power):
            rest.append(Mono(owner, p, q, tuple(power)))
    rest.sort(key=_fkey)
    return sign, tuple(rest)


class Integrand:
    """Sum of terms over the vertices of ``graph``; equality is exact."""

    __slots__ = ("graph", "terms")

    def __init__(self, graph: FeynGraph, terms: Mapping[Term, Fraction] | None = None):
        self.graph = graph
        self.terms: dict[Term, Fraction] = {}
        for t, c in (terms or {}).items():
            self._add(t, Rational(c))

    def _add(self, factors, coeff):
        if not coeff:
            return
        canon = _canonical_term(factors)
        if canon is None:
            return
        sign, term = canon
        self._accumulate(term, coeff if sign > 0 else -coeff)

    def _accumulate(self, term: Term, coeff):
        """Add to a term already in canonical form."""
        terms = self.terms
        v = terms.get(term)
        v = coeff if v is None else v + coeff
        if v:
            terms[term] = v
        else:
            terms.pop(term, None)

    @classmethod
    def from_graph(cls, G: FeynGraph, tests: Iterable[Test] = ()) -> "Integrand":
        d = G.d
        facs = [Kern(i, e.kernel, e.k if e.k else _zero(d), e.u, e.v) for i, e in enumerate(G.edges)]
        facs.extend(tests)
        return cls(G, {tuple(facs): 1})

    @classmethod
    def zero(cls, G: FeynGraph) -> "Integrand":
        return cls(G)

    def copy(self) -> "Integrand":
        out = Integrand(self.graph)
        out.terms = dict(self.terms)
        return out

    def __add__(self, other: "Integrand") -> "Integrand":
        out = self.copy()
        for t, c in other.terms.items():
            out._accumulate(t, c)
        return out

    def __sub__(self, other: "Integrand") -> "Integrand":
        return self + other.scaled(-1)

    def __neg__(self) -> "Integrand":
        return self.scaled(-1)

    def scaled(self, c) -> "Integrand":
        c = Rational(c)
        out = Integrand(self.graph)
        if c:
            out.terms = {t: v * c for t, v in self.terms.items()}
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Integrand) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def is_zero(self) -> bool:
        return not self.terms

    def __len__(self):
        return len(self.terms)

    def map_terms(self, fn) -> "Integrand":
        """Apply a linear map given on single terms (fn returns an Integrand)."""
        out = Integrand(self.graph)
        for t, c in self.terms.items():
            for t2, c2 in fn(t).terms.items():
                out._accumulate(t2, c * c2)
        return out

    # ------------------------------------------------------------ text

    def variable_names(self, rename: bool = True) -> dict[int, str]:
        G = self.graph
        if not rename:
            return dict(enumerate(G.names))
        names = {v: G.names[v] for v in range(G.n_ext)}
        adj: dict[int, list[int]] = {v: [] for v in range(G.n_vertices)}
        for e in G.edges:
            adj[e.u].append(e.v)
            adj[e.v].append(e.u)
        counter = itertools.count()
        seen = set(range(G.n_ext))
        order = list(range(G.n_ext)) + list(G.integrated())
        for root in order:
            if root not in seen:
                seen.add(root)
                names[root] = f"y{next(counter)}"
            stack = [root]
            while stack:
                v = stack.pop()
                for w in sorted(adj[v], reverse=True):
                    if w not in seen:
                        seen.add(w)
                        names[w] = f"y{next(counter)}"
                        stack.append(w)
        return names

    def to_text(self, rename: bool = True) -> str:
        names = self.variable_names(rename)
        lines = ["(integrand"]
        for t in sorted(self.terms, key=lambda t: [_fkey(f) for f in t]):
            parts = [f"(term {self.terms[t]}"]
            for f in t:
                parts.append(_factor_text(f, names))
            lines.append("  " + " ".join(parts) + ")")
        lines.append(")")
        return "\n".join(lines)

    def __str__(self):
        return self.to_text()

    def __repr__(self):
        return f"Integrand({len(self.terms)} terms)"


def _multi(k):
    return "[" + ",".join(map(str, k)) + "]"


def _factor_text(f, names) -> str:
    if isinstance(f, Kern):
        sc = "*" if f.scale is None else str(f.scale)
        return f"(K {f.owner} {f.kernel} {_multi(f.deriv)} {names[f.p]} {names[f.q]} {sc})"
    if isinstance(f, Mono):
        return f"(M {_multi(f.owner)} {names[f.p]} {names[f.q]} {_multi(f.power)})"
    return f"(T {f.name} {names[f.p]} {_multi(f.deriv)})"


_TOKEN = re.compile(r"\(|\)|\[[^\]]*\]|[^\s()\[\]]+")


def parse_integrand_text(text: str, G: FeynGraph, rename: bool = True) -> Integrand:
    """Inverse of :meth:`Integrand.to_text` for integrands over ``G``."""
    names = Integrand(G).variable_names(rename)
    index = {n: v for v, n in names.items()}
    toks = _TOKEN.findall(text)
    pos = 0

    def take(expect=None):
        nonlocal pos
        tok = toks[pos]
        pos += 1
        if expect is not None and tok != expect:
            raise ValueError(f"expected {expect!r}, got {tok!r}")
        return tok

    def ints(tok):
        body = tok.strip("[]").strip()
        return tuple(int(x) for x in body.split(",")) if body else ()

    out = Integrand(G)
    take("(")
    take("integrand")
    while toks[pos] == "(":
        take("(")
        take("term")
        coeff = Rational(Fraction(take()))
        facs = []
        while toks[pos] == "(":
            take("(")
            kind = take()
            if kind == "K":
                owner, kernel, deriv, p, q, sc = int(take()), take(), ints(take()), take(), take(), take()
                facs.append(Kern(owner, kernel, deriv, index[p], index[q], None if sc == "*" else int(sc)))
            elif kind == "M":
                owner, p, q, power = ints(take()), take(), take(), ints(take())
                facs.append(Mono(owner, index[p], index[q], power))
            elif kind == "T":
                name, p, deriv = take(), take(), ints(take())
                facs.append(Test(name, index[p], deriv))
            else:
                raise ValueError(f"unknown factor kind {kind!r}")
            take(")")
        take(")")
        out._add(tuple(facs), coeff)
    take(")")
    return out


# ---------------------------------------------------------------- Taylor subtraction


def _differentiate(factors: Sequence[Factor], v: int, i: int) -> list[tuple[int, tuple]]:
    """Partial derivative in coordinate i of vertex v, by the Leibniz rule."""
    out = []
    for j, f in enumerate(factors):
        if isinstance(f, Kern):
            if f.p == v:
                out.append((1, factors[:j] + (f._replace(deriv=_bump(f.deriv, i)),) + factors[j + 1:]))
            if f.q == v:
                out.append((-1, factors[:j] + (f._replace(deriv=_bump(f.deriv, i)),) + factors[j + 1:]))
        elif isinstance(f, Mono):
            m = f.power[i]
            if m == 0:
                continue
            nf = f._replace(power=_bump(f.power, i, -1))
            if f.p == v:
                out.append((m, factors[:j] + (nf,) + factors[j + 1:]))
            if f.q == v:
                out.append((-m, factors[:j] + (nf,) + factors[j + 1:]))
        elif isinstance(f, Test) and f.p == v:
            out.append((1, factors[:j] + (f._replace(deriv=_bump(f.deriv, i)),) + factors[j + 1:]))
    return out


def _substitute(f: Factor, mapping: Mapping[int, int]) -> Factor:
    if isinstance(f, (Kern, Mono)):
        return f._replace(p=mapping.get(f.p, f.p), q=mapping.get(f.q, f.q))
    return f._replace(p=mapping.get(f.p, f.p))


def _owned_by(f: Factor, g: frozenset) -> bool:
    if isinstance(f, Kern):
        return f.owner in g
    if isinstance(f, Mono):
        return set(f.owner) <= g
    return False


def _taylor_orders(n_vars: int, d: int, max_total: int):
    """All tuples of n_vars multiindices of length d with total order <= max_total."""
    slots = n_vars * d
    for total in range(max_total + 1):
        for combo in itertools.combinations_with_replacement(range(slots), total):
            flat = [0] * slots
            for s in combo:
                flat[s] += 1
            yield tuple(tuple(flat[j * d:(j + 1) * d]) for j in range(n_vars))


def taylor_order(G: FeynGraph, g: SubGraph, strict: bool = False) -> int | None:
    """Largest Taylor order used by the subtraction of g, None when it vanishes."""
    if not G.internal_vertices(g):
        return None
    om = omega(G, g)
    if om.omega > 0:
        return None
    w = om.plus
    top = math.floor(w)
    if strict and top == w:
        top -= 1
    return top if top >= 0 else None


def taylor_term(G: FeynGraph, g: SubGraph, term: Term, order: int,
                base: int | None = None) -> Integrand:
    """Taylor subtraction of g acting on one term."""
    gset = frozenset(g)
    d = G.d
    inside = tuple(f for f in term if _owned_by(f, gset))
    co = tuple(f for f in term if not _owned_by(f, gset))
    vg = G.vertices(g)
    integrated = set(G.integrated())
    refs = set()
    for f in co:
        refs.add(f.p)
        if not isinstance(f, Test):
            refs.add(f.q)
    ys = sorted(v for v in refs if v in vg and v in integrated)
    if base is None:
        base = G.base_point(g)
    if base is None:
        base = ys[0] if ys else None
    out = Integrand(G)
    moving = [y for y in ys if y != base]
    if base is None or not moving:
        out._add(term, Rational(1))
        return out
    mapping = {y: base for y in moving}
    owner = tuple(sorted(g))
    slots = [(y, i) for y in moving for i in range(d)]
    # derivatives of the co-graph product, built one slot at a time from a smaller order
    cache: dict[tuple, dict[tuple, Fraction]] = {(0,) * len(slots): {co: Rational(1)}}
    for ks in _taylor_orders(len(moving), d, order):
        flat = tuple(v for k in ks for v in k)
        derived = cache.get(flat)
        if derived is None:
            j = next(s for s, v in enumerate(flat) if v)
            prev = cache[flat[:j] + (flat[j] - 1,) + flat[j + 1:]]
            y, i = slots[j]
            derived = {}
            for facs, c in prev.items():
                for s, nf in _differentiate(facs, y, i):
                    v = derived.get(nf, 0) + c * s
                    if v:
                        derived[nf] = v
                    else:
                        derived.pop(nf)
            cache[flat] = derived
        if not derived:
            continue
        denom = 1
        monos = []
        for y, k in zip(moving, ks):
            for m in k:
                denom *= math.factorial(m)
            if any(k):
                monos.append(Mono(owner, y, base, k))
        for facs, c in derived.items():
            subst = tuple(_substitute(f, mapping) for f in facs)
            out._add(inside + subst + tuple(monos), c / denom if denom > 1 else c)
    return out


def taylor_subtract(I: Integrand, g: SubGraph, strict: bool = False,
                    base: int | None = None) -> Integrand:
    """The Taylor operator of g applied to every term; zero unless g diverges."""
    G = I.graph
    g = tuple(sorted(g))
    if not set(g) <= set(range(len(G.edges))):
        raise ValueError(f"{g} is not a subgraph of the integrand's graph")
    if base is not None and base not in G.integrated_external(g):
        raise ValueError(f"base vertex {base} is not an integrated external vertex of {g}")
    order = taylor_order(G, g, strict)
    if order is None:
        return Integrand(G)
    # forest expansions hit the same (g, term) pairs over and over; keep the results on the graph
    memo = G._memo

    def expand(t):
        key = ("taylor", g, t, order, base)
        hit = memo.get(key)
        if hit is None:
            hit = memo[key] = taylor_term(G, g, t, order, base)
        return hit

    return I.map_terms(expand)


def slice_integrand(I: Integrand, mu: Mapping[int, int]) -> Integrand:
    """Tag each kernel with the scale its owner edge receives."""
    out = Integrand(I.graph)
    for t, c in I.terms.items():
        out._add(tuple(f._replace(scale=mu[f.owner]) if isinstance(f, Kern) and f.owner in mu else f
                       for f in t), c)
    return out
