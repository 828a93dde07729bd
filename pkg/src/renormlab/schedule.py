"""Obligation ledger for the inductive convergence argument.

The plan walks the basis in the induction preorder.  For each symbol it
records the step that bounds it, then the steps that bound the derivative
symbols of the next one.  Statements are named ``bd(tau)`` (all moments)
and ``bd2(tau)`` (second moment); every obligation lists the statements it
needs and the ones it provides.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable

from .ri import INF, assumption_check, decomposition_l2_lp, degree_rp
from .symbols import DegreeParams, Symbol, degree_value, replace_one_noise, sort_symbols


class AssumptionFailed(ValueError):
    pass


class ScheduleCycle(RuntimeError):
    pass


DETERMINISTIC = "Deterministic"
PROBABILISTIC = "Probabilistic"
ANALYTIC = "Analytic"
ALGEBRAIC = "Algebraic"

_RATIONALE = {
    "base": "elementary deterministic estimates for the derivative noise",
    PROBABILISTIC: "spectral-gap inequality applied to the derivative symbols",
    DETERMINISTIC: "reconstruction of a positive-degree symbol from bounded lower symbols",
    ANALYTIC: "second-moment bound of the derivative model via the analytic step",
    ALGEBRAIC: "L^2 to L^p upgrade through the decomposition pairs",
}


def bd(s: Symbol) -> str:
    return f"bd({s.text})"


def bd2(s: Symbol) -> str:
    return f"bd2({s.text})"


@dataclass
class Obligation:
    index: int
    symbol: str
    step: str
    requires: list[str]
    provides: list[str]
    prerequisites: list[int] = field(default_factory=list)
    side_conditions: list[dict] = field(default_factory=list)
    decomposition: list[dict] = field(default_factory=list)
    rationale: str = ""

    def record(self) -> dict:
        return {
            "index": self.index,
            "symbol": self.symbol,
            "step": self.step,
            "requires": self.requires,
            "provides": self.provides,
            "prerequisites": self.prerequisites,
            "side_conditions": self.side_conditions,
            "decomposition": self.decomposition,
            "rationale": self.rationale,
        }


def _cond(text: str, value: Fraction, holds: bool) -> dict:
    return {"condition": text, "value": str(value), "holds": bool(holds)}


def induction_plan(basis: Iterable[Symbol], params: DegreeParams, slack=0) -> list[Obligation]:
    """Ordered obligations; ``slack`` is subtracted from alpha0 in the recorded output degrees."""
    B = sort_symbols(basis, params)
    report = assumption_check(B, params)
    if not report.passed:
        raise AssumptionFailed(f"symbols at or below degree {report.threshold}: "
                               + ", ".join(t for t, _ in report.violators))
    out_params = replace(params, alpha0=params.alpha0 - Fraction(slack)) if slack else params
    derived = [sort_symbols(replace_one_noise(t), params) for t in B]
    plan: list[Obligation] = []

    def add(symbol, step, requires, provides, **kw):
        ob = Obligation(len(plan), symbol, step, sorted(set(requires)), sorted(set(provides)), **kw)
        plan.append(ob)
        return ob

    if B:
        first = derived[0]
        add(", ".join(s.text for s in first), DETERMINISTIC, [],
            [bd(s) for s in first] + [bd2(s) for s in first],
            side_conditions=[_cond(f"output degree r_inf({s.text})", degree_rp(s, INF, out_params), True)
                             for s in first],
            rationale=_RATIONALE["base"])
    done_dot: list[Symbol] = list(derived[0]) if B else []
    for i, tau in enumerate(B):
        r = degree_value(tau, params)
        lower = [bd(t) for t in B[:i]]
        dots = [bd(s) for s in derived[i]]
        out_deg = degree_value(tau, out_params)
        if r <= 0:
            add(tau.text, PROBABILISTIC, lower + dots, [bd(tau)],
                side_conditions=[_cond("r_inf <= 0", r, True), _cond("output degree", out_deg, True)],
                rationale=_RATIONALE[PROBABILISTIC])
        else:
            add(tau.text, DETERMINISTIC, lower, [bd(tau)],
                side_conditions=[_cond("r_inf > 0", r, True), _cond("output degree", out_deg, True)],
                rationale=_RATIONALE[DETERMINISTIC])
        if i + 1 == len(B):
            break
        fresh = [s for s in derived[i + 1] if s not in done_dot]
        if not fresh:
            continue
        known = [bd(t) for t in B[: i + 1]] + [bd(s) for s in done_dot]
        add(B[i + 1].text, ANALYTIC, known, [bd2(s) for s in fresh],
            side_conditions=[_cond(f"r_2({s.text}) > 0", degree_rp(s, 2, out_params), degree_rp(s, 2, params) > 0)
                             for s in fresh],
            rationale=_RATIONALE[ANALYTIC])
        pairs = []
        for s in fresh:
            pairs.extend({"target": s.text, **p.record()} for p in decomposition_l2_lp(s, params, max_noises=10**6))
        add(B[i + 1].text, ALGEBRAIC, known + [bd2(s) for s in fresh], [bd(s) for s in fresh],
            decomposition=pairs, rationale=_RATIONALE[ALGEBRAIC])
        done_dot.extend(fresh)
    _link(plan)
    return plan


def _link(plan: list[Obligation]) -> None:
    """Fill prerequisites from provided statements, guarding against forward references."""
    provider: dict[str, int] = {}
    for ob in plan:
        for st in ob.provides:
            provider.setdefault(st, ob.index)
    for ob in plan:
        pre = set()
        for st in ob.requires:
            j = provider.get(st)
            if j is None:
                raise ScheduleCycle(f"obligation {ob.index} needs {st}, which nothing provides")
            if j >= ob.index:
                raise ScheduleCycle(f"obligation {ob.index} needs {st}, provided later by {j}")
            pre.add(j)
        ob.prerequisites = sorted(pre)


def is_topological(plan: list[Obligation]) -> bool:
    return all(j < ob.index for ob in plan for j in ob.prerequisites) and \
        [ob.index for ob in plan] == list(range(len(plan)))


def plan_json(plan: list[Obligation]) -> str:
    return json.dumps([ob.record() for ob in plan], indent=2)


def plan_dot(plan: list[Obligation]) -> str:
    lines = ["digraph plan {", "  rankdir=TB;"]
    for ob in plan:
        label = f"{ob.index}: {ob.step}\\n{ob.symbol}".replace('"', "'")
        lines.append(f'  n{ob.index} [label="{label}"];')
    for ob in plan:
        for j in ob.prerequisites:
            lines.append(f"  n{j} -> n{ob.index};")
    lines.append("}")
    return "\n".join(lines) + "\n"
