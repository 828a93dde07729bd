"""Naive, recentred and renormalized interpretations of symbols on the grid."""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..kernels import Grid, GridField, KernelSpec, green, periodic_convolution
from ..symbols import (
    ONE,
    PLANTED,
    POLY,
    XI,
    XID,
    DegreeParams,
    Symbol,
    degree_value,
    is_polynomial,
    one,
    parse_symbol,
    product,
    sort_symbols,
    statistics,
)
from .noise import MCSpec, sample_white_noise


class UnboundXiDot(ValueError):
    pass


class OffGrid(ValueError):
    pass


class MissingCharacterValue(KeyError):
    pass


class ToleranceExceeded(RuntimeError):
    pass


def _monomial(grid: Grid, k, origin=None) -> np.ndarray:
    if origin is None:
        coords = grid.coordinates()
    else:
        coords = grid.displacement(origin)
    out = np.ones(grid.shape)
    for c, m in zip(coords, k):
        if m:
            out = out * c ** m
    return out


def interpret_naive(tau: Symbol, xi_eps: GridField, h_eps: GridField | None = None,
                    kernel: KernelSpec | None = None, _memo: dict | None = None) -> GridField:
    """Literal interpretation: noise, monomials x^k, convolution for planted edges, pointwise products."""
    grid = Grid.of(xi_eps)
    K = kernel or green(grid.d)
    memo = {} if _memo is None else _memo

    def go(s: Symbol) -> np.ndarray:
        hit = memo.get(s)
        if hit is not None:
            return hit
        if s.kind == ONE:
            out = np.ones(grid.shape)
        elif s.kind == XI:
            out = xi_eps.values
        elif s.kind == XID:
            if h_eps is None:
                raise UnboundXiDot(f"{tau.text} contains XiD but no direction field was supplied")
            out = h_eps.values
        elif s.kind == POLY:
            out = _monomial(grid, s.k)
        elif s.kind == PLANTED:
            out = periodic_convolution(xi_eps.like(go(s.children[0])), K, s.k).values
        else:
            out = np.ones(grid.shape)
            for c in s.children:
                out = out * go(c)
        memo[s] = out
        return out

    return xi_eps.like(go(tau).copy())


def grid_index(grid: Grid, x) -> tuple[int, ...]:
    """Grid index of a base point given as integers or as on-grid coordinates."""
    x = tuple(x)
    if len(x) != grid.d:
        raise OffGrid(f"base point {x} has the wrong dimension")
    if all(isinstance(v, (int, np.integer)) for v in x):
        return tuple(int(v) % grid.N for v in x)
    idx = []
    for v in x:
        q = v / grid.h
        if abs(q - round(q)) > 1e-9:
            raise OffGrid(f"base point {x} is not a grid point")
        idx.append(int(round(q)) % grid.N)
    return tuple(idx)


def _taylor_indices(d: int, below: int):
    for total in range(max(below, 0)):
        for combo in itertools.combinations_with_replacement(range(d), total):
            k = [0] * d
            for i in combo:
                k[i] += 1
            yield tuple(k)


def recenter(tau: Symbol, x, xi_eps: GridField, params: DegreeParams, h_eps: GridField | None = None,
             kernel: KernelSpec | None = None, character: "Character | None" = None) -> GridField:
    """Canonical recentred interpretation at base point ``x`` (a grid point).

    With a character, every node first subtracts its root extractions, as in
    :func:`renormalize_interpretation`.
    """
    grid = Grid.of(xi_eps)
    K = kernel or green(grid.d)
    ix = grid_index(grid, x)
    x_coord = tuple(i * grid.h for i in ix)
    memo: dict[Symbol, np.ndarray] = {}

    def conv(f, k):
        return periodic_convolution(xi_eps.like(f), K, k).values

    def go(s: Symbol) -> np.ndarray:
        hit = memo.get(s)
        if hit is not None:
            return hit
        if s.kind == ONE:
            out = np.ones(grid.shape)
        elif s.kind == XI:
            out = xi_eps.values
        elif s.kind == XID:
            if h_eps is None:
                raise UnboundXiDot(f"{tau.text} contains XiD but no direction field was supplied")
            out = h_eps.values
        elif s.kind == POLY:
            out = _monomial(grid, s.k, x_coord)
        elif s.kind == PLANTED:
            inner = go(s.children[0])
            k = s.k
            out = conv(inner, k)
            order = degree_value(s, params)
            for ell in _taylor_indices(grid.d, math.ceil(order)):
                if sum(ell) >= order:
                    continue
                coeff = conv(inner, tuple(a + b for a, b in zip(k, ell)))[ix]
                out = out - coeff * _monomial(grid, ell, x_coord) / math.prod(math.factorial(m) for m in ell)
        else:
            out = np.ones(grid.shape)
            for c in s.children:
                out = out * go(c)
        if character is not None:
            for ex in extract_root_negative(s, params)[1:]:
                c = character[ex.sigma]
                if c:
                    out = out - ex.multiplicity * c * go(ex.remainder)
        memo[s] = out
        return out

    return xi_eps.like(go(tau).copy())


def base_points(grid: Grid, per_dim: int = 8) -> list[tuple[int, ...]]:
    step = max(grid.N // per_dim, 1)
    axis = range(0, grid.N, step)
    return list(itertools.product(axis, repeat=grid.d))


@dataclass
class ModelData:
    """Recentred fields per symbol and base point, with run metadata."""

    fields: dict[str, dict[tuple, GridField]]
    eps: float | None
    character: "Character | None" = None
    direction: GridField | None = None


def build_model(symbols: Iterable[Symbol], noise_field: GridField, params: DegreeParams,
                points: Sequence[tuple] | None = None, eps: float | None = None,
                h_eps: GridField | None = None, kernel: KernelSpec | None = None) -> ModelData:
    grid = Grid.of(noise_field)
    points = points if points is not None else base_points(grid)
    out = {}
    for s in symbols:
        out[s.text] = {tuple(p): recenter(s, p, noise_field, params, h_eps, kernel) for p in points}
    return ModelData(out, eps, None, h_eps)


# ---------------------------------------------------------------- extraction


@dataclass(frozen=True)
class Extraction:
    sigma: Symbol
    remainder: Symbol
    multiplicity: int = 1

    @property
    def trivial(self) -> bool:
        return self.sigma is one()


def extract_root_negative(tau: Symbol, params: DegreeParams) -> list[Extraction]:
    """Negative-degree sub-products of the root paired with the rest of the root.

    Branches are the root factors; pruning keeps a sub-multiset of them.  The
    trivial pair (nothing extracted) comes first.
    """
    facs = tau.factors()
    out = [Extraction(one(), tau, 1)]
    seen: Counter = Counter()
    for r in range(1, len(facs) + 1):
        for idx in itertools.combinations(range(len(facs)), r):
            sigma = product(facs[i] for i in idx)
            if statistics(sigma).n_xidot or statistics(sigma).n_xi == 0:
                continue
            if degree_value(sigma, params) >= 0:
                continue
            rest = product(facs[i] for i in range(len(facs)) if i not in idx)
            seen[(sigma, rest)] += 1
    for (sigma, rest), m in sorted(seen.items(), key=lambda p: (p[0][0].text, p[0][1].text)):
        out.append(Extraction(sigma, rest, m))
    return out


# ---------------------------------------------------------------- characters


class Character:
    """Real values on negative-degree XiD-free symbols; zero outside that domain."""

    def __init__(self, values: Mapping, params: DegreeParams, stderr: Mapping | None = None,
                 identically_zero: bool = False):
        self.params = params
        self.values: dict[Symbol, float] = {}
        self.stderr: dict[Symbol, float] = {}
        self.identically_zero = identically_zero
        for key, v in values.items():
            s = parse_symbol(key, params) if isinstance(key, str) else key
            if not self.in_domain(s):
                raise ValueError(f"{s.text} is outside the character domain (negative degree, no XiD)")
            self.values[s] = float(v)
        for key, v in (stderr or {}).items():
            s = parse_symbol(key, params) if isinstance(key, str) else key
            self.stderr[s] = float(v)

    @classmethod
    def zero(cls, params: DegreeParams) -> "Character":
        return cls({}, params, identically_zero=True)

    def in_domain(self, s: Symbol) -> bool:
        return statistics(s).n_xidot == 0 and not is_polynomial(s) and degree_value(s, self.params) < 0

    def __getitem__(self, s: Symbol) -> float:
        if s in self.values:
            return self.values[s]
        if self.identically_zero or not self.in_domain(s):
            return 0.0
        raise MissingCharacterValue(s.text)

    def with_value(self, s: Symbol, v: float, err: float | None = None) -> "Character":
        vals = dict(self.values)
        vals[s] = v
        errs = dict(self.stderr)
        if err is not None:
            errs[s] = err
        return Character(vals, self.params, errs, self.identically_zero)

    def to_json(self) -> dict:
        return {s.text: v for s, v in sorted(self.values.items(), key=lambda p: p[0].text)}

    @classmethod
    def from_json(cls, data: Mapping[str, float], params: DegreeParams) -> "Character":
        return cls(data, params)

    @classmethod
    def load(cls, path, params: DegreeParams) -> "Character":
        with open(path) as fh:
            return cls.from_json(json.load(fh), params)


def renormalize_interpretation(tau: Symbol, ell: "Character | Mapping", xi_eps: GridField,
                               params: DegreeParams, h_eps: GridField | None = None,
                               kernel: KernelSpec | None = None) -> GridField:
    """Preparation-map recursion: at every node subtract ell(sigma) times the remainder."""
    grid = Grid.of(xi_eps)
    K = kernel or green(grid.d)
    memo: dict[Symbol, np.ndarray] = {}

    def value(sigma):
        if isinstance(ell, Character):
            return ell[sigma]
        if sigma in ell:
            return float(ell[sigma])
        if sigma.text in ell:
            return float(ell[sigma.text])
        raise MissingCharacterValue(sigma.text)

    def go(s: Symbol) -> np.ndarray:
        hit = memo.get(s)
        if hit is not None:
            return hit
        out = np.ones(grid.shape)
        for f in s.factors():
            if f.kind == XI:
                out = out * xi_eps.values
            elif f.kind == XID:
                if h_eps is None:
                    raise UnboundXiDot(f"{tau.text} contains XiD but no direction field was supplied")
                out = out * h_eps.values
            elif f.kind == POLY:
                out = out * _monomial(grid, f.k)
            else:
                out = out * periodic_convolution(xi_eps.like(go(f.children[0])), K, f.k).values
        for ex in extract_root_negative(s, params)[1:]:
            c = value(ex.sigma)
            if c:
                out = out - ex.multiplicity * c * go(ex.remainder)
        memo[s] = out
        return out

    return xi_eps.like(go(tau).copy())


def renormalization_depth(tau: Symbol, params: DegreeParams) -> int:
    """Number of nested subtraction layers the recursion can produce."""
    best = 0
    for ex in extract_root_negative(tau, params)[1:]:
        best = max(best, 1 + renormalization_depth(ex.remainder, params))
    for f in tau.factors():
        if f.kind == PLANTED:
            best = max(best, renormalization_depth(f.children[0], params))
    return best


def extraction_closure(symbols: Iterable[Symbol], params: DegreeParams) -> set[Symbol]:
    """Symbols plus everything the renormalization recursion can reach from them."""
    todo = list(symbols)
    seen: set[Symbol] = set()
    while todo:
        s = todo.pop()
        if s in seen:
            continue
        seen.add(s)
        for ex in extract_root_negative(s, params)[1:]:
            todo.extend((ex.sigma, ex.remainder))
        todo.extend(f.children[0] for f in s.factors() if f.kind == PLANTED)
    return seen


def noise_fields(grid: Grid, eps: float | None, mc: MCSpec) -> list[GridField]:
    return [sample_white_noise(grid, mc.seed, j).mollified(eps) for j in mc.streams()]


def bphz_character(tau: Symbol, eps: float | None, mc: MCSpec, grid: Grid, params: DegreeParams,
                   known: Character | None = None, kernel: KernelSpec | None = None,
                   fields: Sequence[GridField] | None = None) -> tuple[float, float]:
    """Value making the ensemble-and-space average of the renormalized interpretation vanish.

    Returns (value, standard error over samples).
    """
    if degree_value(tau, params) >= 0:
        raise ValueError(f"{tau.text} has non-negative degree")
    known = known or Character.zero(params)
    ell = known.with_value(tau, 0.0)
    fields = fields if fields is not None else noise_fields(grid, eps, mc)
    means = np.array([renormalize_interpretation(tau, ell, f, params, kernel=kernel).values.mean() for f in fields])
    value = float(math.fsum(means) / len(means))
    err = float(means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else math.inf
    if mc.tolerance is not None and err > mc.tolerance:
        raise ToleranceExceeded(f"standard error {err:.3g} for {tau.text} exceeds {mc.tolerance}")
    return value, err


def bphz_characters(symbols: Iterable[Symbol], eps: float | None, mc: MCSpec, grid: Grid,
                    params: DegreeParams, kernel: KernelSpec | None = None) -> Character:
    """Characters of all negative XiD-free symbols, smallest first in the preorder."""
    ell = Character({}, params)
    fields = noise_fields(grid, eps, mc)
    targets = [s for s in sort_symbols(extraction_closure(symbols, params), params) if ell.in_domain(s)]
    for s in targets:
        v, e = bphz_character(s, eps, mc, grid, params, ell, kernel, fields)
        ell = ell.with_value(s, v, e)
    return ell
