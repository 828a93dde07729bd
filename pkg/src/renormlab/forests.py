"""Forest formula, scale assignments, Gallavotti-Nicolo trees and forest classification."""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .graphs import (
    FeynGraph,
    GraphError,
    SubGraph,
    compatible,
    enumerate_divergent,
    forests_of,
    is_forest,
    omega,
)
from .integrand import Integrand, slice_integrand, taylor_subtract

log = logging.getLogger(__name__)

INF = float("inf")


def is_divergent(G: FeynGraph, g: Sequence[int]) -> bool:
    return bool(G.internal_vertices(g)) and G.is_connected(g) and omega(G, g).divergent


def leaves_to_root(forest: Iterable[SubGraph]) -> list[SubGraph]:
    """Inner subgraphs before the ones containing them; ties by edge tuple."""
    return sorted({tuple(sorted(g)) for g in forest}, key=lambda g: (len(g), g))


def apply_forest(I: Integrand, forest: Iterable[SubGraph], strict: bool = False) -> Integrand:
    """Product of (-T_g) over the forest, leaves first."""
    out = I
    for g in leaves_to_root(forest):
        out = -taylor_subtract(out, g, strict)
        if out.is_zero():
            break
    return out


def zimmermann_product(I: Integrand, forest: Iterable[SubGraph], strict: bool = False) -> Integrand:
    """Product of (Id - T_g) over the forest, leaves first."""
    forest = leaves_to_root(forest)
    if not is_forest(I.graph, forest):
        raise GraphError("zimmermann_product needs a forest")
    out = I
    for g in forest:
        out = out - taylor_subtract(out, g, strict)
    return out


class ForestProducts:
    """Products of (-T_g) over forests, sharing work between forests with a common prefix."""

    def __init__(self, I: Integrand, strict: bool = False):
        self.base = I
        self.strict = strict
        self._cache: dict[tuple, Integrand] = {(): I}

    def __call__(self, forest: Iterable[SubGraph]) -> Integrand:
        key = tuple(leaves_to_root(forest))
        out = self._cache.get(key)
        if out is None:
            prev = self(key[:-1])
            out = prev if prev.is_zero() else -taylor_subtract(prev, key[-1], self.strict)
            self._cache[key] = out
        return out


def forest_sum(I: Integrand, forests: Iterable[Iterable[SubGraph]], strict: bool = False,
               products: ForestProducts | None = None) -> Integrand:
    products = products or ForestProducts(I, strict)
    total = Integrand(I.graph)
    for F in forests:
        total = total + products(F)
    return total


def subforests(forest: Sequence[SubGraph]) -> Iterable[tuple[SubGraph, ...]]:
    forest = list(forest)
    for r in range(len(forest) + 1):
        yield from itertools.combinations(forest, r)


def bphz_renormalize(I: Integrand | FeynGraph, strict: bool = False,
                     budget: int = 2**14) -> Integrand:
    """Sum over all forests of divergent subgraphs of the product of (-T_g)."""
    if isinstance(I, FeynGraph):
        I = Integrand.from_graph(I)
    forests = forests_of(I.graph, budget=budget)
    log.debug("bphz: %d forests", len(forests))
    return forest_sum(I, forests, strict)


def maximal_forests(G: FeynGraph) -> list[tuple[SubGraph, ...]]:
    """Forests not contained in any other forest."""
    fs = [frozenset(F) for F in forests_of(G)]
    return [tuple(sorted(F)) for F in fs if not any(F < H for H in fs)]


# ---------------------------------------------------------------- scales


@dataclass(frozen=True)
class ScaleAssignment:
    scales: tuple[int, ...]
    i_min: int = -2
    i_max: int = 10

    def __post_init__(self):
        for s in self.scales:
            if not self.i_min <= s <= self.i_max:
                raise ValueError(f"scale {s} outside [{self.i_min}, {self.i_max}]")

    def __getitem__(self, e: int) -> int:
        return self.scales[e]

    def as_map(self) -> dict[int, int]:
        return dict(enumerate(self.scales))

    @property
    def lowest(self) -> int:
        return min(self.scales)

    @property
    def highest(self) -> int:
        return max(self.scales)

    @classmethod
    def random(cls, n_edges: int, rng: random.Random, lo: int = -2, hi: int = 10) -> "ScaleAssignment":
        return cls(tuple(rng.randint(lo, hi) for _ in range(n_edges)), lo, hi)


def slice_graph(I: Integrand, mu: ScaleAssignment | Mapping[int, int]) -> Integrand:
    mapping = mu.as_map() if isinstance(mu, ScaleAssignment) else dict(mu)
    return slice_integrand(I, mapping)


@dataclass
class GNTree:
    """Connected components of the edges of scale >= i, for each i."""

    levels: dict[int, list[SubGraph]]
    parent: dict[tuple[int, SubGraph], tuple[int, SubGraph] | None]

    def nodes(self) -> list[tuple[int, SubGraph]]:
        return [(i, c) for i in sorted(self.levels) for c in self.levels[i]]

    def distinct_components(self) -> list[SubGraph]:
        """Each edge set once, highest scale first."""
        seen = []
        for i in sorted(self.levels, reverse=True):
            for c in self.levels[i]:
                if c not in seen:
                    seen.append(c)
        return seen


def gn_tree(G: FeynGraph, mu: ScaleAssignment) -> GNTree:
    levels: dict[int, list[SubGraph]] = {}
    for i in range(mu.lowest, mu.highest + 1):
        levels[i] = G.components(e for e in range(len(G.edges)) if mu[e] >= i)
    parent: dict = {}
    for i, comps in levels.items():
        for c in comps:
            if i == mu.lowest:
                parent[(i, c)] = None
                continue
            outer = [h for h in levels[i - 1] if set(c) <= set(h)]
            if len(outer) != 1:
                raise AssertionError("scale components are not nested")
            parent[(i, c)] = (i - 1, outer[0])
    return GNTree(levels, parent)


def quasi_local(G: FeynGraph, g1: Sequence[int], g2: Sequence[int], mu: ScaleAssignment) -> bool:
    """Every scale of g1 exceeds every scale of g2 minus g1 (strictly)."""
    s1, s2 = set(g1), set(g2)
    if not s1 < s2:
        raise ValueError("quasi_local needs g1 strictly inside g2")
    m = min(mu[e] for e in s1)
    M = max(mu[e] for e in s2 - s1)
    return m > M


# ---------------------------------------------------------------- safe / dangerous


def _inner_union(g: SubGraph, family: Iterable[SubGraph]) -> set[int]:
    sg = set(g)
    out: set[int] = set()
    for h in family:
        if set(h) < sg:
            out |= set(h)
    return out


def _outer(g: SubGraph, family: Iterable[SubGraph], G: FeynGraph) -> set[int]:
    sg = set(g)
    best = None
    for h in family:
        if sg < set(h) and (best is None or len(h) < len(best)):
            best = h
    return set(best) if best is not None else set(range(len(G.edges)))


def inner_scale(G: FeynGraph, g: SubGraph, family, mu) -> float:
    """Smallest scale on the edges of g not covered by smaller members."""
    rest = set(g) - _inner_union(g, family)
    return min((mu[e] for e in rest), default=INF)


def outer_scale(G: FeynGraph, g: SubGraph, family, mu) -> float:
    """Largest scale on edges of the enclosing member (or G) that touch g from outside."""
    vg = G.vertices(g)
    parent = _outer(g, family, G)
    sg = set(g)
    vals = [mu[e] for e in parent - sg if G.edges[e].u in vg or G.edges[e].v in vg]
    return max(vals, default=-INF)


def dangerous_part(G: FeynGraph, forest: Iterable[SubGraph], mu) -> set[SubGraph]:
    fam = [tuple(sorted(g)) for g in forest]
    return {g for g in fam if inner_scale(G, g, fam, mu) > outer_scale(G, g, fam, mu)}


def safe_part(G: FeynGraph, forest: Iterable[SubGraph], mu) -> frozenset[SubGraph]:
    fam = {tuple(sorted(g)) for g in forest}
    return frozenset(fam - dangerous_part(G, fam, mu))


@dataclass(frozen=True)
class SafeDangerous:
    dangerous: frozenset
    safe: frozenset
    safe_plus: frozenset


def safe_plus(G: FeynGraph, forest: Iterable[SubGraph], mu,
              divergent: Sequence[SubGraph] | None = None) -> frozenset[SubGraph]:
    """Divergent g compatible with the forest that are dangerous once added to its safe part."""
    fam = {tuple(sorted(g)) for g in forest}
    safe = safe_part(G, fam, mu)
    div = enumerate_divergent(G) if divergent is None else divergent
    out = set()
    for g in div:
        g = tuple(sorted(g))
        if not all(compatible(G, g, h) for h in fam):
            continue
        if g in dangerous_part(G, set(safe) | {g}, mu):
            out.add(g)
    return frozenset(out)


def safe_dangerous(G: FeynGraph, forest: Iterable[SubGraph], mu,
                   divergent: Sequence[SubGraph] | None = None) -> SafeDangerous:
    fam = [tuple(sorted(g)) for g in forest]
    if not is_forest(G, fam):
        raise GraphError("safe_dangerous needs a forest")
    dang = dangerous_part(G, fam, mu)
    safe = frozenset(set(fam) - dang)
    return SafeDangerous(frozenset(dang), safe, safe_plus(G, fam, mu, divergent))


@dataclass
class Classification:
    blocks: dict[frozenset, list[frozenset]]
    idempotent: bool
    sandwich: bool
    closure_is_forest: bool

    @property
    def ok(self) -> bool:
        return self.idempotent and self.sandwich and self.closure_is_forest


def classify_forests(G: FeynGraph, mu, forests: Sequence | None = None,
                     divergent: Sequence[SubGraph] | None = None) -> Classification:
    """Group forests by safe part and check the sandwich characterisation of each block."""
    div = enumerate_divergent(G) if divergent is None else list(divergent)
    fs = [frozenset(tuple(sorted(g)) for g in F) for F in (forests_of(G, divergent=div) if forests is None else forests)]
    blocks: dict[frozenset, list[frozenset]] = {}
    idem = True
    for F in fs:
        S = safe_part(G, F, mu)
        if safe_part(G, S, mu) != S:
            idem = False
        blocks.setdefault(S, []).append(F)
    sandwich = True
    closure = True
    for S, members in blocks.items():
        plus = safe_plus(G, S, mu, div)
        top = S | plus
        if not is_forest(G, top):
            closure = False
        expected = {F for F in fs if S <= F <= top}
        if expected != set(members):
            sandwich = False
    return Classification(blocks, idem, sandwich, closure)


# ---------------------------------------------------------------- parcimonious


def forest_family(G: FeynGraph, mu: ScaleAssignment) -> list[SubGraph]:
    """Divergent Gallavotti-Nicolo components; every subset of them is a forest."""
    return [c for c in gn_tree(G, mu).distinct_components() if is_divergent(G, c)]


def parcimonious(I: Integrand, mu: ScaleAssignment, strict: bool = False) -> Integrand:
    """Product from the highest scale down of (Id - T) over the scale components."""
    G = I.graph
    out = slice_graph(I, mu)
    for comp in gn_tree(G, mu).distinct_components():
        out = out - taylor_subtract(out, comp, strict)
    return out


def parcimonious_by_forests(I: Integrand, mu: ScaleAssignment, strict: bool = False) -> Integrand:
    """Same quantity written as a sum over subsets of the divergent scale components."""
    sliced = slice_graph(I, mu)
    fam = forest_family(I.graph, mu)
    return forest_sum(sliced, subforests(fam), strict)


def window_assignments(n_edges: int, lo: int, hi: int) -> Iterable[ScaleAssignment]:
    for s in itertools.product(range(lo, hi + 1), repeat=n_edges):
        yield ScaleAssignment(tuple(s), lo, hi)


def parcimonious_window(I: Integrand, lo: int, hi: int) -> Integrand:
    total = Integrand(I.graph)
    for mu in window_assignments(len(I.graph.edges), lo, hi):
        total = total + parcimonious(I, mu)
    return total


def parcimonious_window_regrouped(I: Integrand, lo: int, hi: int) -> Integrand:
    """Sum over forests first, then over the assignments whose family contains the forest."""
    G = I.graph
    mus = list(window_assignments(len(G.edges), lo, hi))
    fams = {mu: set(forest_family(G, mu)) for mu in mus}
    total = Integrand(G)
    for F in forests_of(G):
        for mu in mus:
            if set(F) <= fams[mu]:
                total = total + apply_forest(slice_graph(I, mu), F)
    return total
