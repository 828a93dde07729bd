"""Rule-constrained generation of symbol bases.

A rule is a whitelist of node types.  A node type fixes how many noise leaves
sit at a node, how many planted children hang from it, and how large a
monomial it may carry.  Planted children must themselves be admissible nodes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .symbols import (
    PLANTED,
    POLY,
    XI,
    DegreeParams,
    Symbol,
    as_fraction,
    degree_value,
    planted,
    poly,
    product,
    sort_symbols,
    statistics,
    xi,
)


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeType:
    n_noise: int
    min_planted: int = 0
    max_planted: int = 0
    poly_max: int = 0


@dataclass(frozen=True)
class Rule:
    name: str
    node_types: tuple[NodeType, ...]
    decorations: tuple[tuple[int, ...], ...] | None = None
    gamma_max: Fraction = Fraction(2)
    node_budget: int = 20000

    def edge_decorations(self, d: int) -> tuple[tuple[int, ...], ...]:
        return self.decorations if self.decorations is not None else ((0,) * d,)


def pam_rule(gamma_max=2, poly_max: int = 8) -> Rule:
    """Each node carries one noise, at most one planted child and a monomial."""
    return Rule("pam", (NodeType(1, 0, 1, poly_max),), gamma_max=as_fraction(gamma_max))


def phi4_rule(gamma_max=2) -> Rule:
    """Either a lone noise leaf or a product of one to three planted children."""
    return Rule("phi4", (NodeType(1, 0, 0, 0), NodeType(0, 1, 3, 0)), gamma_max=as_fraction(gamma_max))


BUILTIN_RULES = {"pam": pam_rule, "phi4": phi4_rule}


def _monomials(d: int, max_total: int):
    for total in range(max_total + 1):
        for combo in itertools.combinations_with_replacement(range(d), total):
            k = [0] * d
            for i in combo:
                k[i] += 1
            yield tuple(k)


def generate_basis(rule: Rule, params: DegreeParams) -> list[Symbol]:
    """All rule-conforming symbols of degree below ``rule.gamma_max``, preorder-sorted.

    Generation is a fixpoint over node assemblies.  A degree that keeps
    dropping as nodes nest signals a non-subcritical rule, caught by the budget.
    """
    gmax = rule.gamma_max
    decos = rule.edge_decorations(params.d)
    found: set[Symbol] = set()
    frontier_changed = True
    while frontier_changed:
        frontier_changed = False
        pool = sorted(found, key=lambda s: s.text)
        children = [planted(s, k) for s in pool for k in decos]
        for nt in rule.node_types:
            for n_pl in range(nt.min_planted, nt.max_planted + 1):
                for kids in itertools.combinations_with_replacement(children, n_pl):
                    base = product([xi()] * nt.n_noise + list(kids))
                    for k in _monomials(params.d, nt.poly_max):
                        s = product([base, poly(k)])
                        if statistics(s).n_xi == 0:
                            continue
                        if degree_value(s, params) >= gmax:
                            # monomials only raise the degree
                            break
                        if s not in found:
                            found.add(s)
                            frontier_changed = True
                            if len(found) > rule.node_budget:
                                raise BudgetExceeded(
                                    f"rule {rule.name!r} produced more than {rule.node_budget} symbols"
                                )
    return sort_symbols(found, params)


def node_conforms(s: Symbol, rule: Rule, params: DegreeParams) -> bool:
    """Predicate form of the rule, used to audit generated bases."""
    facs = s.factors()
    n_noise = sum(1 for f in facs if f.kind == XI)
    kids = [f for f in facs if f.kind == PLANTED]
    monos = [f for f in facs if f.kind == POLY]
    others = len(facs) - n_noise - len(kids) - len(monos)
    if others or statistics(s).n_xi == 0:
        return False
    mono_deg = sum(sum(m.k) for m in monos)
    decos = set(rule.edge_decorations(params.d))
    ok = any(
        nt.n_noise == n_noise and nt.min_planted <= len(kids) <= nt.max_planted and mono_deg <= nt.poly_max
        for nt in rule.node_types
    )
    if not ok:
        return False
    return all(k.k in decos and node_conforms(k.children[0], rule, params) for k in kids)


def subtrees_required(s: Symbol) -> Iterable[Symbol]:
    """Children under planted edges, recursively."""
    for f in s.factors():
        if f.kind == PLANTED:
            yield f.children[0]
            yield from subtrees_required(f.children[0])


def basis_records(basis: Iterable[Symbol], params: DegreeParams) -> list[dict]:
    out = []
    for s in basis:
        st = statistics(s)
        out.append(
            {
                "symbol": s.text,
                "degree": str(degree_value(s, params)),
                "n_xi": st.n_xi,
                "n_edges": st.n_edges,
            }
        )
    return out
