"""Regularity-integrability arithmetic and the L^2 -> L^p bookkeeping.

Integrabilities live in [1, inf] and are stored through their inverse, an
exact rational in [0, 1], so that 1/inf = 0 and the difference operation is
exact.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .symbols import (
    ONE,
    PLANTED,
    POLY,
    XI,
    XID,
    DegreeParams,
    Symbol,
    as_fraction,
    degree_value,
    is_polynomial,
    planted,
    poly,
    product,
    statistics,
    xi,
)

INF = math.inf


class NotComparable(ValueError):
    pass


class SideConditionViolated(ValueError):
    pass


class DegreeIdentityViolated(ValueError):
    pass


class OutsideBasis(ValueError):
    pass


def inverse(p) -> Fraction:
    """1/p for p in [1, inf], exact."""
    if p == INF:
        return Fraction(0)
    p = as_fraction(p)
    if p < 1:
        raise ValueError(f"integrability {p} is below 1")
    return 1 / p


def from_inverse(q: Fraction):
    return INF if q == 0 else 1 / q


@dataclass(frozen=True)
class RIPair:
    r: Fraction
    inv: Fraction  # 1 / integrability

    @classmethod
    def of(cls, r, i=INF) -> "RIPair":
        return cls(as_fraction(r), inverse(i))

    @property
    def i(self):
        return from_inverse(self.inv)

    def __str__(self):
        return f"({self.r}, {self.i})"


@dataclass(frozen=True)
class Comparison:
    preceq: bool
    prec: bool


def ri_compare(b: RIPair, a: RIPair) -> Comparison:
    """b <= a iff r(b) <= r(a) and i(b) >= i(a); strict in the regularity for b < a."""
    wider = b.inv <= a.inv
    return Comparison(b.r <= a.r and wider, b.r < a.r and wider)


def ri_ominus(a: RIPair, b: RIPair) -> RIPair:
    if not ri_compare(b, a).preceq:
        raise NotComparable(f"{b} is not below {a}")
    return RIPair(a.r - b.r, a.inv - b.inv)


# ---------------------------------------------------------------- degrees


def _classic(params: DegreeParams) -> DegreeParams:
    return params if params.mode == "classic" else replace(params, mode="classic")


def _check_p(p):
    if p != INF and as_fraction(p) < 2:
        raise ValueError(f"p={p} must lie in [2, inf]")


def degree_rp(tau: Symbol, p, params: DegreeParams) -> Fraction:
    """Degree with the derivative noise counted as alpha0 + d/p."""
    _check_p(p)
    n = statistics(tau).n_xidot
    if n > 1:
        raise ValueError(f"{tau.text} contains {n} derivative noises")
    return degree_value(tau, _classic(params)) + n * params.d * inverse(p)


def integrability_ip(tau: Symbol, p):
    _check_p(p)
    n = statistics(tau).n_xidot
    if n > 1:
        raise ValueError(f"{tau.text} contains {n} derivative noises")
    return INF if n == 0 else p


def ri_pair(tau: Symbol, p, params: DegreeParams) -> RIPair:
    return RIPair.of(degree_rp(tau, p, params), integrability_ip(tau, p))


def p_star(sigma: Symbol, params: DegreeParams):
    """The unique q in (2, inf] with r_q(sigma) = 0."""
    if statistics(sigma).n_xidot != 1:
        raise SideConditionViolated(f"{sigma.text} must contain exactly one derivative noise")
    r_inf = degree_rp(sigma, INF, params)
    r_2 = degree_rp(sigma, 2, params)
    if not (r_inf <= 0 < r_2):
        raise SideConditionViolated(f"need r_inf <= 0 < r_2 for {sigma.text}, got {r_inf} and {r_2}")
    if r_inf == 0:
        return INF
    return Fraction(-params.d) / r_inf


def embedding_numerology_check(tau: Symbol, sigma: Symbol, eta: Symbol, p, params: DegreeParams) -> bool:
    """r_inf(eta) - d (1/p(sigma) - 1/p) = r_p(tau), given r_p(tau) = r_p(sigma) + r_inf(eta)."""
    lhs = degree_rp(tau, p, params)
    if lhs != degree_rp(sigma, p, params) + degree_rp(eta, INF, params):
        raise DegreeIdentityViolated(f"r_p({tau.text}) != r_p({sigma.text}) + r_inf({eta.text})")
    ps = p_star(sigma, params)
    return degree_rp(eta, INF, params) - params.d * (inverse(ps) - inverse(p)) == lhs


# ---------------------------------------------------------------- sectors


def _lower_parts(s: Symbol, params: DegreeParams) -> set[Symbol]:
    """Symbols reachable by lowering monomials, or by replacing planted branches with
    lower parts of their children or with monomials of lower degree."""
    if s.kind in (ONE, XI, XID):
        return {s}
    facs = s.factors()
    options = []
    for f in facs:
        if f.kind == POLY:
            options.append([poly(m) for m in itertools.product(*(range(a + 1) for a in f.k))])
        elif f.kind == PLANTED:
            opts = [planted(c, f.k) for c in _lower_parts(f.children[0], params) if not is_polynomial(c)]
            deg = degree_value(f, params)
            opts.extend(poly(m) for m in _multiindices(params.d, max(math.ceil(deg), 0)) if sum(m) < deg)
            options.append(opts)
        else:
            options.append([f])
    return {product(choice) for choice in itertools.product(*options)}


def _multiindices(d: int, top: int):
    for n in range(top + 1):
        for combo in itertools.combinations_with_replacement(range(d), n):
            k = [0] * d
            for i in combo:
                k[i] += 1
            yield tuple(k)


@dataclass(frozen=True)
class GammaReport:
    symbol: str
    alpha: Fraction
    gamma: Fraction
    sector: tuple[str, ...]
    note: str = "sector approximated by structural lower parts"


def gamma_tau(tau: Symbol, basis: Iterable[Symbol], params: DegreeParams) -> GammaReport:
    """gamma_tau = alpha_tau + d/2, alpha_tau the least degree of a non-polynomial lower part of tau in B."""
    B = set(basis)
    if tau not in B:
        raise OutsideBasis(f"{tau.text} is not in the basis")
    n = statistics(tau).n_xi
    sector = sorted((s for s in _lower_parts(tau, params) & B
                     if not is_polynomial(s) and statistics(s).n_xi <= n), key=lambda s: s.text)
    alpha = min(degree_value(s, params) for s in sector)
    return GammaReport(tau.text, alpha, alpha + Fraction(params.d, 2), tuple(s.text for s in sector))


# ---------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class DecompositionPair:
    sigma: Symbol
    eta: Symbol
    shift: tuple          # Taylor multi-index moved from the planted factor onto the rest
    exponent: object      # p(sigma), or inf when r_inf(sigma) > 0
    regime: str           # "embedding" (p_star applies) or "bounded" (r_inf(sigma) > 0)
    coefficient: str      # symbolic lambda_j

    def record(self) -> dict:
        return {"sigma": self.sigma.text, "eta": self.eta.text, "shift": list(self.shift),
                "exponent": "inf" if self.exponent == INF else str(self.exponent),
                "regime": self.regime, "coefficient": self.coefficient}


def decomposition_l2_lp(tau: Symbol, params: DegreeParams, max_noises: int = 3) -> list[DecompositionPair]:
    """Pairs (sigma_j, eta_j) from Taylor-expanding the root planted factor that carries
    the derivative noise: sigma = I_{k+m}(child), eta = X^m times the other root factors,
    for |m| < r_2 of that factor.  A derivative noise sitting at the root yields no pairs.
    """
    st = statistics(tau)
    if st.n_xidot != 1 or st.n_xi + st.n_xidot > max_noises:
        raise OutsideBasis(f"{tau.text} is outside the catalogue of trees with one derivative noise "
                           f"and at most {max_noises} noises")
    facs = list(tau.factors())
    carrier = next((j for j, f in enumerate(facs) if f.kind == PLANTED and statistics(f).n_xidot), None)
    if carrier is None:
        return []
    P = facs[carrier]
    rest = facs[:carrier] + facs[carrier + 1:]
    top = degree_rp(P, 2, params)
    out = []
    for m in _multiindices(params.d, max(int(math.ceil(top)), 0)):
        if not sum(m) < top:
            continue
        k = tuple(a + b for a, b in zip(P.k, m))
        sigma = planted(P.children[0], k)
        eta = product(rest + [poly(m)])
        r_inf = degree_rp(sigma, INF, params)
        if r_inf > 0:
            exp, regime = INF, "bounded"
        else:
            exp, regime = p_star(sigma, params), "embedding"
        out.append(DecompositionPair(sigma, eta, m, exp, regime, f"lambda_{len(out) + 1}"))
    for pair in out:
        for p in (2, 4, INF):
            if degree_rp(tau, p, params) != degree_rp(pair.sigma, p, params) + degree_rp(pair.eta, INF, params):
                raise DegreeIdentityViolated(f"pair ({pair.sigma.text}, {pair.eta.text}) breaks the degree identity")
    return out


# ---------------------------------------------------------------- assumptions


@dataclass(frozen=True)
class AssumptionReport:
    passed: bool
    violators: tuple[tuple[str, Fraction], ...]
    threshold: Fraction


def assumption_check(basis: Iterable[Symbol], params: DegreeParams) -> AssumptionReport:
    """Every symbol other than the bare noise must have degree above -d/2."""
    thr = Fraction(-params.d, 2)
    bad = []
    for s in basis:
        if s is xi():
            continue
        r = degree_value(s, _classic(params))
        if not r > thr:
            bad.append((s.text, r))
    return AssumptionReport(not bad, tuple(sorted(bad)), thr)


def random_pairs(n: int, seed: int = 0, denominators: Sequence[int] = (1, 2, 3, 4, 6, 8)) -> list[tuple[RIPair, RIPair]]:
    """Random comparable pairs (a, b) with b <= a, integrabilities including inf."""
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        r_b = Fraction(rng.randint(-40, 40), rng.choice(denominators))
        r_a = r_b + Fraction(rng.randint(0, 40), rng.choice(denominators))
        inv_b = Fraction(0) if rng.random() < 0.2 else Fraction(1, rng.randint(1, 12))
        inv_a = inv_b + (Fraction(0) if rng.random() < 0.2 else (1 - inv_b) * Fraction(rng.randint(0, 12), 12))
        out.append((RIPair(r_a, inv_a), RIPair(r_b, inv_b)))
    return out


__all__ = [
    "INF", "RIPair", "Comparison", "ri_compare", "ri_ominus", "degree_rp", "integrability_ip", "ri_pair",
    "p_star", "embedding_numerology_check", "gamma_tau", "GammaReport", "decomposition_l2_lp",
    "DecompositionPair", "assumption_check", "AssumptionReport", "random_pairs", "NotComparable",
    "SideConditionViolated", "DegreeIdentityViolated", "OutsideBasis", "inverse", "from_inverse",
]
