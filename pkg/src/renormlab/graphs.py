"""Feynman graphs for iterated integrals, power counting and forests.

Vertices are numbered with the external ones first; that numbering is the
canonical index used for base points and orderings.  A subgraph is a sorted
tuple of edge indices.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .symbols import as_fraction

SubGraph = tuple  # sorted tuple of edge indices


class GraphError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    a: Fraction
    k: tuple[int, ...] = ()
    kernel: str = "K"

    @property
    def weight(self) -> Fraction:
        """Exponent used in power counting: derivatives cost one unit each."""
        return self.a + sum(self.k)


@dataclass(frozen=True)
class FeynGraph:
    n_ext: int
    n_int: int
    edges: tuple[Edge, ...]
    names: tuple[str, ...] = ()
    d: int = 2
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        n = self.n_ext + self.n_int
        if not self.names:
            object.__setattr__(self, "names", tuple(f"z{i}" for i in range(self.n_ext))
                               + tuple(f"x{i}" for i in range(self.n_int)))
        if len(self.names) != n or len(set(self.names)) != n:
            raise GraphError("vertex names must be distinct and match the vertex count")
        for e in self.edges:
            if not (0 <= e.u < n and 0 <= e.v < n):
                raise GraphError(f"edge endpoint outside the vertex set: {e}")
            if e.a <= 0:
                raise GraphError(f"kernel exponent must be positive: {e}")
            if e.k and len(e.k) != self.d:
                raise GraphError(f"derivative multiindex length {len(e.k)} != d={self.d}")

    # ------------------------------------------------------------ basics

    @property
    def n_vertices(self) -> int:
        return self.n_ext + self.n_int

    @property
    def all_edges(self) -> SubGraph:
        return tuple(range(len(self.edges)))

    def is_external(self, v: int) -> bool:
        return v < self.n_ext

    def integrated(self) -> range:
        return range(self.n_ext, self.n_vertices)

    def _cached(self, kind: str, g, compute):
        key = (kind, g if isinstance(g, tuple) else tuple(g))
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo[key] = compute(key[1])
        return hit

    def vertices(self, g: Iterable[int]) -> frozenset[int]:
        return self._cached("v", g, self._vertices)

    def _vertices(self, g) -> frozenset[int]:
        out = set()
        for i in g:
            out.add(self.edges[i].u)
            out.add(self.edges[i].v)
        return frozenset(out)

    def external_vertices(self, g: Sequence[int]) -> frozenset[int]:
        """Vertices of g that are external to G or meet an edge outside g."""
        return self._cached("x", g, self._external_vertices)

    def _external_vertices(self, g) -> frozenset[int]:
        inside = set(g)
        vg = self.vertices(g)
        ext = {v for v in vg if self.is_external(v)}
        for j, e in enumerate(self.edges):
            if j in inside:
                continue
            for v in (e.u, e.v):
                if v in vg:
                    ext.add(v)
        return frozenset(ext)

    def internal_vertices(self, g: Sequence[int]) -> frozenset[int]:
        return self.vertices(g) - self.external_vertices(g)

    def integrated_external(self, g: Sequence[int]) -> list[int]:
        return sorted(v for v in self.external_vertices(g) if not self.is_external(v))

    def base_point(self, g: Sequence[int]) -> int | None:
        """Smallest-index integrated external vertex of g (None if there is none)."""
        cand = self.integrated_external(g)
        return cand[0] if cand else None

    def is_connected(self, g: Sequence[int]) -> bool:
        g = list(g)
        if not g:
            return False
        adj: dict[int, set[int]] = {}
        for i in g:
            e = self.edges[i]
            adj.setdefault(e.u, set()).add(e.v)
            adj.setdefault(e.v, set()).add(e.u)
        start = next(iter(adj))
        seen = {start}
        stack = [start]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(adj)

    def components(self, g: Iterable[int]) -> list[SubGraph]:
        """Connected components of an edge set, each a sorted edge tuple."""
        g = sorted(set(g))
        parent = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i in g:
            e = self.edges[i]
            ru, rv = find(e.u), find(e.v)
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)
        groups: dict[int, list[int]] = {}
        for i in g:
            groups.setdefault(find(self.edges[i].u), []).append(i)
        return sorted((tuple(sorted(c)) for c in groups.values()))

    # ------------------------------------------------------------ io

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "ext": list(self.names[: self.n_ext]),
            "int": list(self.names[self.n_ext:]),
            "edges": [
                {
                    "u": self.names[e.u],
                    "v": self.names[e.v],
                    "a": str(e.a),
                    "k": list(e.k) if e.k else [0] * self.d,
                    "kernel": e.kernel,
                }
                for e in self.edges
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping, d: int | None = None) -> "FeynGraph":
        try:
            ext = [str(v) for v in data["ext"]]
            ints = [str(v) for v in data["int"]]
            d = int(data.get("d", d if d is not None else 2)) if d is None else d
            names = ext + ints
            idx = {n: i for i, n in enumerate(names)}
            edges = []
            for e in data["edges"]:
                k = tuple(int(x) for x in e.get("k", [0] * d))
                edges.append(Edge(idx[str(e["u"])], idx[str(e["v"])], as_fraction(_num(e["a"])),
                                  k if any(k) else (), str(e.get("kernel", "K"))))
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph document: {exc!r}") from exc
        return cls(len(ext), len(ints), tuple(edges), tuple(names), d)

    @classmethod
    def load(cls, path, d: int | None = None) -> "FeynGraph":
        with open(path) as fh:
            return cls.from_json(json.load(fh), d)


def _num(x):
    if isinstance(x, str):
        return Fraction(x)
    return x


def make_graph(n_ext: int, n_int: int, edges: Iterable[tuple], d: int = 2) -> FeynGraph:
    """Shorthand: edges given as (u, v, a) or (u, v, a, k) with integer vertex ids."""
    out = []
    for e in edges:
        u, v, a = e[:3]
        k = tuple(e[3]) if len(e) > 3 and e[3] is not None and any(e[3]) else ()
        kernel = e[4] if len(e) > 4 else "K"
        out.append(Edge(u, v, as_fraction(a), k, kernel))
    return FeynGraph(n_ext, n_int, tuple(out), d=d)


# ---------------------------------------------------------------- power counting


@dataclass(frozen=True)
class Omega:
    omega: Fraction

    @property
    def plus(self) -> Fraction:
        return max(Fraction(0), -self.omega)

    @property
    def divergent(self) -> bool:
        return self.omega <= 0


def omega(G: FeynGraph, g: Sequence[int], d: int | None = None) -> Omega:
    d = G.d if d is None else d

    def compute(g):
        n_int = len(G.internal_vertices(g))
        return Omega(Fraction(d * (n_int - 1)) - sum((G.edges[i].weight for i in g), Fraction(0)))

    return G._cached(("omega", d), g, compute)


def candidate_subgraphs(G: FeynGraph, budget: int = 16) -> list[SubGraph]:
    """Connected edge subsets with at least one internal vertex, sorted by edge tuple."""
    m = len(G.edges)
    if m > budget:
        raise BudgetExceeded(f"{m} edges exceed the enumeration budget {budget}")
    out = []
    for r in range(1, m + 1):
        for g in itertools.combinations(range(m), r):
            if G.is_connected(g) and G.internal_vertices(g):
                out.append(g)
    out.sort()
    return out


def enumerate_divergent(G: FeynGraph, d: int | None = None, budget: int = 16) -> list[SubGraph]:
    return [g for g in candidate_subgraphs(G, budget) if omega(G, g, d).divergent]


def weinberg_check(G: FeynGraph, d: int | None = None, budget: int = 16) -> bool:
    """True when every candidate subgraph has positive superficial degree."""
    return not enumerate_divergent(G, d, budget)


def compatible(G: FeynGraph, g: Sequence[int], h: Sequence[int]) -> bool:
    """Nested (as edge sets) or vertex-disjoint."""
    sg, sh = set(g), set(h)
    if sg <= sh or sh <= sg:
        return True
    return not (G.vertices(g) & G.vertices(h))


def is_forest(G: FeynGraph, family: Iterable[Sequence[int]]) -> bool:
    fam = list(family)
    return all(compatible(G, a, b) for a, b in itertools.combinations(fam, 2))


@dataclass
class Forest:
    """Family of pairwise compatible subgraphs with its nesting tree."""

    graph: FeynGraph
    members: tuple[SubGraph, ...]
    parent: dict = field(default_factory=dict)

    def __post_init__(self):
        self.members = tuple(sorted(set(tuple(sorted(g)) for g in self.members), key=_size_key))
        if not is_forest(self.graph, self.members):
            raise GraphError("family is not a forest (overlapping members)")
        self.parent = {g: outer_of(g, self.members, self.graph) for g in self.members}

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def inner_union(self, g: SubGraph) -> frozenset[int]:
        """Union of members strictly inside g (g plus its F-descendants)."""
        out = set()
        for h in self.members:
            if set(h) < set(g):
                out |= set(h)
        return frozenset(out)

    def leaves_to_root(self) -> tuple[SubGraph, ...]:
        return self.members

    def to_json(self) -> list:
        kids: dict = {}
        roots = []
        for g in self.members:
            p = self.parent[g]
            (roots if p is None else kids.setdefault(p, [])).append(g)

        def node(g):
            return {"edges": list(g), "children": [node(c) for c in kids.get(g, [])]}

        return [node(r) for r in roots]


def _size_key(g):
    return (len(g), g)


def outer_of(g: SubGraph, family: Iterable[SubGraph], G: FeynGraph) -> SubGraph | None:
    """Minimal member strictly containing g, None meaning the whole graph."""
    sg = set(g)
    best = None
    for h in family:
        if sg < set(h) and (best is None or len(h) < len(best)):
            best = h
    return best


def forests_of(G: FeynGraph, d: int | None = None, divergent: Sequence[SubGraph] | None = None,
               budget: int = 2**14) -> list[tuple[SubGraph, ...]]:
    """All pairwise compatible subsets of the divergent subgraphs, the empty one included."""
    div = list(enumerate_divergent(G, d) if divergent is None else divergent)
    n = len(div)
    compat = [[compatible(G, div[i], div[j]) for j in range(n)] for i in range(n)]
    out: list[tuple[SubGraph, ...]] = []

    def grow(start: int, chosen: list[int]):
        out.append(tuple(div[i] for i in chosen))
        if len(out) > budget:
            raise BudgetExceeded(f"more than {budget} forests")
        for j in range(start, n):
            if all(compat[i][j] for i in chosen):
                chosen.append(j)
                grow(j + 1, chosen)
                chosen.pop()

    grow(0, [])
    return out


# ---------------------------------------------------------------- covering trees


@dataclass(frozen=True)
class PowerProduct:
    """Formal product of edge parameters raised to rational powers."""

    exponents: tuple[tuple[int, Fraction], ...]

    def evaluate(self, r: Mapping[int, float]) -> float:
        out = 1.0
        for e, p in self.exponents:
            out *= float(r[e]) ** float(p)
        return out

    def __str__(self):
        parts = [f"r{e}^({p})" for e, p in self.exponents if p]
        return "*".join(parts) if parts else "1"


def covering_tree_bound(G: FeynGraph, tree: Iterable[int], d: int | None = None) -> PowerProduct:
    """(prod over all edges r_e)^(-d/2) times (prod over tree edges r_e)^(d/2).

    With external vertices present they are merged into one root that the
    tree must connect every integration vertex to.
    """
    d = G.d if d is None else d
    tree = sorted(set(tree))
    root = -1

    def node(v):
        return root if G.is_external(v) else v

    targets = set(G.integrated()) | ({root} if G.n_ext else set())
    parent = {v: v for v in targets}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in tree:
        if not 0 <= i < len(G.edges):
            raise GraphError(f"tree edge {i} not in the graph")
        e = G.edges[i]
        a, b = node(e.u), node(e.v)
        if a not in parent or b not in parent:
            raise GraphError("tree edge leaves the integration vertices")
        ra, rb = find(a), find(b)
        if ra == rb:
            raise GraphError("tree edges contain a cycle")
        parent[ra] = rb
    if len({find(v) for v in targets}) != 1:
        raise GraphError("tree does not span the integration vertices")
    half = Fraction(d, 2)
    exps = tuple((i, (Fraction(0) if i in tree else -half)) for i in range(len(G.edges)))
    return PowerProduct(exps)


# ---------------------------------------------------------------- graph suites


def _canon(n: int, edges: Sequence[tuple[int, int]], ext: frozenset = frozenset()):
    best = None
    for perm in itertools.permutations(range(n)):
        es = tuple(sorted(tuple(sorted((perm[u], perm[v]))) for u, v in edges))
        key = (tuple(sorted(perm[v] for v in ext)), es)
        if best is None or key < best:
            best = key
    return best


def connected_multigraphs(max_edges: int) -> list[tuple[int, tuple[tuple[int, int], ...]]]:
    """Loopless connected multigraphs up to isomorphism, as (n_vertices, edges)."""
    level = {(2, ((0, 1),))}
    out = set(level)
    for _ in range(max_edges - 1):
        nxt = set()
        for n, edges in level:
            for u in range(n):
                for v in range(u + 1, n + 1):
                    m = n + (v == n)
                    nxt.add((m, _canon(m, edges + ((u, v),))[1]))
        level = nxt
        out |= nxt
    return sorted(out, key=lambda g: (len(g[1]), g))


def graph_suite(max_edges: int = 5, max_ext: int = 2) -> list[tuple[int, tuple, tuple]]:
    """Connected graphs with a choice of at most max_ext external vertices, up to isomorphism.

    Returns (n_vertices, edges, externals) with externals a sorted vertex tuple.
    """
    out = set()
    for n, edges in connected_multigraphs(max_edges):
        for r in range(0, min(max_ext, n) + 1):
            for ext in itertools.combinations(range(n), r):
                key = _canon(n, edges, frozenset(ext))
                out.add((n, key[1], key[0]))
    return sorted(out, key=lambda g: (len(g[1]), g))


def suite_graph(n: int, edges: Sequence[tuple[int, int]], ext: Sequence[int],
                exponents: Sequence, d: int = 2) -> FeynGraph:
    """Relabel so that the external vertices come first, then build the graph."""
    order = list(ext) + [v for v in range(n) if v not in ext]
    pos = {v: i for i, v in enumerate(order)}
    return make_graph(len(ext), n - len(ext),
                      [(pos[u], pos[v], a) for (u, v), a in zip(edges, exponents)], d=d)
