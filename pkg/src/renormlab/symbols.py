"""Decorated-tree symbols: parsing, canonical form, degrees and the formal derivative.

Symbols are immutable and interned, so structural equality is identity on
canonical trees.  The textual grammar is::

    expr := "1" | "Xi" | "XiD" | "X^[k1,...,kd]"
          | "I_[k1,...,kd](" expr ")" | "I(" expr ")" | expr "*" expr
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

ONE, XI, XID, POLY, PLANTED, PRODUCT = "one", "xi", "xid", "poly", "planted", "product"

# factor ordering inside products: noises first, then monomials, then planted trees
_KIND_RANK = {XI: 0, XID: 1, POLY: 2, PLANTED: 3}


class SymbolSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


@dataclass(frozen=True)
class DegreeParams:
    """Ambient dimension and noise regularity.

    ``mode`` is ``"classic"`` (the derivative noise has degree ``alpha0``) or
    ``"hs"`` (it has degree ``theta``).
    """

    d: int
    alpha0: Fraction
    kernel_gain: Fraction = Fraction(2)
    mode: str = "classic"
    theta: Fraction = Fraction(1, 2)

    def __post_init__(self):
        object.__setattr__(self, "alpha0", as_fraction(self.alpha0))
        object.__setattr__(self, "kernel_gain", as_fraction(self.kernel_gain))
        object.__setattr__(self, "theta", as_fraction(self.theta))
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        # alpha0 = -d/2 (kappa = 0) is kept for exact degree bookkeeping at the boundary
        if self.alpha0 > Fraction(-self.d, 2):
            raise ValueError(f"alpha0={self.alpha0} must be <= -d/2")
        if self.mode not in ("classic", "hs"):
            raise ValueError(f"unknown degree mode {self.mode!r}")
        if self.mode == "hs" and not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    @classmethod
    def from_kappa(cls, d: int, kappa, **kw) -> "DegreeParams":
        return cls(d=d, alpha0=Fraction(-d, 2) - as_fraction(kappa), **kw)


@dataclass(frozen=True, order=True)
class Degree:
    """Element ``a*alpha0 + c`` of Q(alpha0), kept exact."""

    a: Fraction = Fraction(0)
    c: Fraction = Fraction(0)

    def __add__(self, other: "Degree") -> "Degree":
        return Degree(self.a + other.a, self.c + other.c)

    def __sub__(self, other: "Degree") -> "Degree":
        return Degree(self.a - other.a, self.c - other.c)

    def shift(self, c) -> "Degree":
        return Degree(self.a, self.c + as_fraction(c))

    def value(self, params: DegreeParams) -> Fraction:
        return self.a * params.alpha0 + self.c

    def __str__(self) -> str:
        parts = []
        if self.a:
            parts.append("a0" if self.a == 1 else f"{self.a}*a0")
        if self.c or not parts:
            parts.append(str(self.c))
        return "+".join(parts).replace("+-", "-")


_INTERN: dict[tuple, "Symbol"] = {}
_INTERN_LOCK = threading.Lock()


class Symbol:
    """Canonical decorated rooted tree.  Build through the module constructors."""

    __slots__ = ("kind", "k", "children", "_text", "_hash", "__weakref__")

    def __init__(self, kind, k, children):
        self.kind = kind
        self.k = k
        self.children = children
        self._text = None
        self._hash = hash((kind, k, children))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"Symbol({self.text!r})"

    def __str__(self):
        return self.text

    def __reduce__(self):
        return (_intern, (self.kind, self.k, self.children))

    def __mul__(self, other: "Symbol") -> "Symbol":
        return product([self, other])

    @property
    def text(self) -> str:
        if self._text is None:
            self._text = _render(self)
        return self._text

    def factors(self) -> tuple["Symbol", ...]:
        if self.kind == PRODUCT:
            return self.children
        if self.kind == ONE:
            return ()
        return (self,)

    def sort_key(self):
        return (_KIND_RANK.get(self.kind, 4), self.text)


def _intern(kind, k=None, children=()) -> Symbol:
    key = (kind, k, children)
    sym = _INTERN.get(key)
    if sym is None:
        with _INTERN_LOCK:
            sym = _INTERN.setdefault(key, Symbol(kind, k, children))
    return sym


def _render(s: Symbol) -> str:
    if s.kind == ONE:
        return "1"
    if s.kind == XI:
        return "Xi"
    if s.kind == XID:
        return "XiD"
    if s.kind == POLY:
        return "X^[" + ",".join(map(str, s.k)) + "]"
    if s.kind == PLANTED:
        if any(s.k):
            return "I_[" + ",".join(map(str, s.k)) + "](" + s.children[0].text + ")"
        return "I(" + s.children[0].text + ")"
    return "*".join(c.text for c in s.children)


def one() -> Symbol:
    return _intern(ONE)


def xi() -> Symbol:
    return _intern(XI)


def xi_dot() -> Symbol:
    return _intern(XID)


def poly(k: Iterable[int]) -> Symbol:
    k = tuple(int(v) for v in k)
    if any(v < 0 for v in k):
        raise ValueError("multiindex entries must be natural numbers")
    if not any(k):
        return one()
    return _intern(POLY, k)


def planted(child: Symbol, k: Iterable[int] | None = None, d: int | None = None) -> Symbol:
    if k is None:
        if d is None:
            d = _infer_dim(child) or 1
        k = (0,) * d
    k = tuple(int(v) for v in k)
    if any(v < 0 for v in k):
        raise ValueError("multiindex entries must be natural numbers")
    return _intern(PLANTED, k, (child,))


def product(factors: Iterable[Symbol]) -> Symbol:
    flat: list[Symbol] = []
    mono: tuple[int, ...] | None = None
    for f in factors:
        for g in f.factors():
            if g.kind == POLY:
                mono = g.k if mono is None else _add_multi(mono, g.k)
            else:
                flat.append(g)
    if mono is not None and any(mono):
        flat.append(poly(mono))
    if not flat:
        return one()
    if len(flat) == 1:
        return flat[0]
    flat.sort(key=Symbol.sort_key)
    return _intern(PRODUCT, None, tuple(flat))


def _add_multi(a, b):
    if len(a) != len(b):
        raise ValueError("multiindex length mismatch")
    return tuple(x + y for x, y in zip(a, b))


def _infer_dim(s: Symbol) -> int | None:
    if s.kind in (POLY, PLANTED):
        return len(s.k)
    for c in s.children:
        d = _infer_dim(c)
        if d is not None:
            return d
    return None


def canonicalize(s: Symbol) -> Symbol:
    """Rebuild through the canonical constructors; idempotent."""
    if s.kind in (ONE, XI, XID):
        return s
    if s.kind == POLY:
        return poly(s.k)
    if s.kind == PLANTED:
        return planted(canonicalize(s.children[0]), s.k)
    return product(canonicalize(c) for c in s.children)


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, text: str, d: int | None):
        self.text = text
        self.pos = 0
        self.d = d

    def error(self, msg):
        raise SymbolSyntaxError(msg, self.pos)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, token: str) -> bool:
        self.skip()
        return self.text.startswith(token, self.pos)

    def expect(self, token: str):
        if not self.peek(token):
            self.error(f"expected {token!r}")
        self.pos += len(token)

    def parse(self) -> Symbol:
        s = self.expr()
        self.skip()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return s

    def expr(self) -> Symbol:
        factors = [self.atom()]
        while self.peek("*"):
            self.pos += 1
            factors.append(self.atom())
        return product(factors)

    def atom(self) -> Symbol:
        self.skip()
        if self.peek("("):
            self.pos += 1
            s = self.expr()
            self.expect(")")
            return s
        if self.peek("1"):
            self.pos += 1
            return one()
        if self.peek("XiD"):
            self.pos += 3
            return xi_dot()
        if self.peek("Xi"):
            self.pos += 2
            return xi()
        if self.peek("X^"):
            self.pos += 2
            return poly(self.multiindex())
        if self.peek("I_"):
            self.pos += 2
            k = self.multiindex()
            self.expect("(")
            child = self.expr()
            self.expect(")")
            return planted(child, k)
        if self.peek("I("):
            self.pos += 2
            start = self.pos
            child = self.expr()
            self.expect(")")
            if self.d is None:
                self.pos = start
                self.error("dimension unknown for undecorated I(...)")
            return planted(child, (0,) * self.d)
        self.error("expected a symbol")

    def multiindex(self) -> tuple[int, ...]:
        start = self.pos
        self.expect("[")
        entries = []
        while True:
            self.skip()
            j = self.pos
            while j < len(self.text) and self.text[j].isdigit():
                j += 1
            if j == self.pos:
                self.error("expected a natural number")
            entries.append(int(self.text[self.pos:j]))
            self.pos = j
            if self.peek(","):
                self.pos += 1
                continue
            self.expect("]")
            break
        if self.d is not None and len(entries) != self.d:
            self.pos = start
            self.error(f"multiindex has length {len(entries)}, expected d={self.d}")
        return tuple(entries)


def parse_symbol(text: str, params: DegreeParams | int | None = None) -> Symbol:
    """Parse the grammar into a canonical symbol.

    ``params`` may be a :class:`DegreeParams`, a bare dimension, or ``None``
    when the expression carries explicit multiindices only.
    """
    d = params.d if isinstance(params, DegreeParams) else params
    return _Parser(text, d).parse()


# ---------------------------------------------------------------- queries


def degree(s: Symbol, params: DegreeParams) -> Degree:
    """Exact degree in Q(alpha0)."""
    if s.kind == ONE:
        return Degree()
    if s.kind == XI:
        return Degree(Fraction(1), Fraction(0))
    if s.kind == XID:
        if params.mode == "hs":
            return Degree(Fraction(0), params.theta)
        return Degree(Fraction(1), Fraction(0))
    if s.kind == POLY:
        return Degree(Fraction(0), Fraction(sum(s.k)))
    if s.kind == PLANTED:
        return degree(s.children[0], params).shift(params.kernel_gain - sum(s.k))
    total = Degree()
    for c in s.children:
        total = total + degree(c, params)
    return total


def degree_value(s: Symbol, params: DegreeParams) -> Fraction:
    return degree(s, params).value(params)


@dataclass(frozen=True)
class Statistics:
    n_xi: int
    n_xidot: int
    n_edges: int


def statistics(s: Symbol) -> Statistics:
    if s.kind == XI:
        return Statistics(1, 0, 0)
    if s.kind == XID:
        return Statistics(0, 1, 0)
    if s.kind in (ONE, POLY):
        return Statistics(0, 0, 0)
    n_xi = n_xid = n_e = 0
    if s.kind == PLANTED:
        n_e = 1
    for c in s.children:
        st = statistics(c)
        n_xi += st.n_xi
        n_xid += st.n_xidot
        n_e += st.n_edges
    return Statistics(n_xi, n_xid, n_e)


def is_polynomial(s: Symbol) -> bool:
    return s.kind in (ONE, POLY)


def preorder_key(s: Symbol, params: DegreeParams):
    st = statistics(s)
    return (st.n_xi, st.n_edges, degree_value(s, params), s.text)


def preorder_cmp(a: Symbol, b: Symbol, params: DegreeParams) -> int:
    """-1, 0 or 1 comparing (n_xi, edges, degree), then canonical text."""
    ka, kb = preorder_key(a, params), preorder_key(b, params)
    return (ka > kb) - (ka < kb)


def sort_symbols(symbols: Iterable[Symbol], params: DegreeParams) -> list[Symbol]:
    return sorted(set(symbols), key=lambda s: preorder_key(s, params))


# ---------------------------------------------------------------- derivative

LinComb = dict  # Symbol -> int


def _lc_add(acc: dict, sym: Symbol, coeff: int):
    v = acc.get(sym, 0) + coeff
    if v:
        acc[sym] = v
    else:
        acc.pop(sym, None)


def malliavin_D(s: Symbol) -> dict[Symbol, int]:
    """Formal derivative: a derivation sending Xi to XiD and monomials to zero."""
    if statistics(s).n_xidot:
        raise ValueError(f"{s.text} already contains XiD")
    return _derive(s)


def _derive(s: Symbol) -> dict[Symbol, int]:
    if s.kind == XI:
        return {xi_dot(): 1}
    if s.kind in (ONE, POLY, XID):
        return {}
    if s.kind == PLANTED:
        out: dict[Symbol, int] = {}
        for t, c in _derive(s.children[0]).items():
            _lc_add(out, planted(t, s.k), c)
        return out
    out = {}
    facs = s.children
    for i, f in enumerate(facs):
        rest = facs[:i] + facs[i + 1:]
        for t, c in _derive(f).items():
            _lc_add(out, product((t,) + rest), c)
    return out


def lc_text(lc: Mapping[Symbol, int]) -> list[tuple[int, str]]:
    return sorted(((c, s.text) for s, c in lc.items()), key=lambda p: p[1])


def replace_one_noise(s: Symbol) -> list[Symbol]:
    """All symbols obtained by swapping exactly one Xi leaf for XiD (with repetition)."""
    if s.kind == XI:
        return [xi_dot()]
    if s.kind in (ONE, POLY, XID):
        return []
    if s.kind == PLANTED:
        return [planted(t, s.k) for t in replace_one_noise(s.children[0])]
    out = []
    for i, f in enumerate(s.children):
        rest = s.children[:i] + s.children[i + 1:]
        out.extend(product((t,) + rest) for t in replace_one_noise(f))
    return out


def extended_basis(basis: Iterable[Symbol], params: DegreeParams | None = None) -> list[Symbol]:
    """Deduplicated set of one-noise replacements, canonically ordered."""
    found = set()
    for s in basis:
        if statistics(s).n_xidot:
            raise ValueError(f"{s.text} already contains XiD")
        found.update(replace_one_noise(s))
    if params is not None:
        return sort_symbols(found, params)
    return sorted(found, key=lambda t: t.text)


def substitute_xidot(s: Symbol, replacement: Symbol) -> Symbol:
    if s.kind == XID:
        return replacement
    if s.kind in (ONE, POLY, XI):
        return s
    if s.kind == PLANTED:
        return planted(substitute_xidot(s.children[0], replacement), s.k)
    return product(substitute_xidot(c, replacement) for c in s.children)
