"""Independent brute-force oracles.  Nothing here calls into renormlab."""

import itertools
from fractions import Fraction


def _connected(edges, idx):
    if not idx:
        return False
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            x = parent[x]
        return x

    for i in idx:
        u, v = edges[i][:2]
        parent[find(u)] = find(v)
    return len({find(edges[i][0]) for i in idx}) == 1


def _verts(edges, idx):
    return {edges[i][0] for i in idx} | {edges[i][1] for i in idx}


def internal_vertices(edges, n_ext, idx):
    vg = _verts(edges, idx)
    touched_outside = set()
    for j, e in enumerate(edges):
        if j not in idx:
            touched_outside |= {e[0], e[1]}
    return {v for v in vg if v >= n_ext and v not in touched_outside}


def superficial_degree(edges, n_ext, idx, d):
    """d (|V_int| - 1) - sum of exponents; an edge (u, v, a, k) costs a + |k|."""
    n = len(internal_vertices(edges, n_ext, idx))
    cost = sum(Fraction(e[2]) + (sum(e[3]) if len(e) > 3 and e[3] else 0) for e in (edges[i] for i in idx))
    return d * (n - 1) - cost


def brute_divergent(edges, n_ext, d):
    out = []
    for r in range(1, len(edges) + 1):
        for idx in itertools.combinations(range(len(edges)), r):
            s = set(idx)
            if _connected(edges, s) and internal_vertices(edges, n_ext, s) and superficial_degree(edges, n_ext, s, d) <= 0:
                out.append(idx)
    return sorted(out)


def compatible(edges, g, h):
    a, b = set(g), set(h)
    return a <= b or b <= a or not (_verts(edges, a) & _verts(edges, b))


def brute_forests(edges, divergent):
    out = []
    for r in range(len(divergent) + 1):
        for fam in itertools.combinations(divergent, r):
            if all(compatible(edges, g, h) for g, h in itertools.combinations(fam, 2)):
                out.append(tuple(sorted(fam)))
    return sorted(out)


def components_at_scale(edges, scales, i):
    """Connected components of the edges of scale >= i, as sorted edge tuples."""
    idx = [j for j, s in enumerate(scales) if s >= i]
    comps = []
    remaining = set(idx)
    while remaining:
        seed = remaining.pop()
        comp = {seed}
        grew = True
        while grew:
            grew = False
            for j in list(remaining):
                if _verts(edges, {j}) & _verts(edges, comp):
                    comp.add(j)
                    remaining.discard(j)
                    grew = True
        comps.append(tuple(sorted(comp)))
    return sorted(comps)


def brute_dangerous(edges, forest, scales):
    """Members whose uncovered edges all sit above every edge hanging off them inside the parent."""
    fam = [frozenset(g) for g in forest]
    everything = frozenset(range(len(edges)))
    out = set()
    for g in fam:
        covered = set().union(*[h for h in fam if h < g])
        own = [scales[e] for e in g - covered]
        parents = [h for h in fam if g < h]
        parent = min(parents, key=len) if parents else everything
        vg = _verts(edges, g)
        touching = [scales[e] for e in parent - g if set(edges[e][:2]) & vg]
        lo = min(own) if own else float("inf")
        hi = max(touching) if touching else float("-inf")
        if lo > hi:
            out.add(tuple(sorted(g)))
    return out


def brute_classification(edges, divergent, scales):
    """(idempotent, sandwich, closure) for the safe-part fibration, scanning every forest."""
    forests = [frozenset(F) for F in brute_forests(edges, divergent)]

    def safe(F):
        return frozenset(set(F) - brute_dangerous(edges, F, scales))

    idem = all(safe(safe(F)) == safe(F) for F in forests)
    blocks = {}
    for F in forests:
        blocks.setdefault(safe(F), set()).add(F)
    sandwich = closure = True
    for S, members in blocks.items():
        plus = {g for g in divergent if all(compatible(edges, g, h) for h in S)
                and g in brute_dangerous(edges, set(S) | {g}, scales)}
        top = set(S) | plus
        if not all(compatible(edges, g, h) for g, h in itertools.combinations(top, 2)):
            closure = False
        if members != {F for F in forests if S <= F <= top}:
            sandwich = False
    return idem, sandwich, closure
