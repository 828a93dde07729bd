import json
from fractions import Fraction

import networkx as nx
import pytest

from renormlab.basis import generate_basis, pam_rule, phi4_rule
from renormlab.schedule import (
    ALGEBRAIC, ANALYTIC, DETERMINISTIC, PROBABILISTIC, AssumptionFailed, Obligation, ScheduleCycle, _link,
    induction_plan, is_topological, plan_dot, plan_json,
)
from renormlab.symbols import PLANTED, DegreeParams, degree_value, parse_symbol, xi

P2 = DegreeParams.from_kappa(2, Fraction(1, 20))
P3 = DegreeParams.from_kappa(3, Fraction(1, 20))


def test_noise_only_plan():
    plan = induction_plan([xi()], P2)
    assert [(o.step, o.symbol) for o in plan] == [(DETERMINISTIC, "XiD"), (PROBABILISTIC, "Xi")]
    assert plan[0].provides == ["bd(XiD)", "bd2(XiD)"] and "elementary" in plan[0].rationale
    assert plan[1].requires == ["bd(XiD)"] and plan[1].prerequisites == [0]


@pytest.mark.parametrize("rule,P", [(pam_rule(), P2), (phi4_rule(), P3)], ids=["pam", "phi4"])
def test_plan_is_a_topological_order(rule, P):
    plan = induction_plan(generate_basis(rule, P), P)
    assert is_topological(plan)
    dag = nx.DiGraph()
    dag.add_nodes_from(o.index for o in plan)
    dag.add_edges_from((j, o.index) for o in plan for j in o.prerequisites)
    assert nx.is_directed_acyclic_graph(dag)
    provided = set()
    for o in plan:
        assert set(o.requires) <= provided
        provided |= set(o.provides)


@pytest.mark.parametrize("rule,P", [(pam_rule(), P2), (phi4_rule(), P3)], ids=["pam", "phi4"])
def test_step_kinds_follow_degree_signs(rule, P):
    B = generate_basis(rule, P)
    plan = induction_plan(B, P)
    for t in B:
        (own,) = [o for o in plan if o.provides == [f"bd({t.text})"]]
        assert own.step == (PROBABILISTIC if degree_value(t, P) <= 0 else DETERMINISTIC)


def test_positive_planted_symbols_are_deterministic():
    B = generate_basis(phi4_rule(), P3)
    plan = induction_plan(B, P3)
    positive = [t for t in B if t.kind == PLANTED and degree_value(t, P3) > 0]
    assert parse_symbol("I(Xi)", 3) in positive
    for t in positive:
        assert {o.step for o in plan if o.symbol == t.text and f"bd({t.text})" in o.provides} == {DETERMINISTIC}


def test_analytic_and_algebraic_steps_come_in_pairs():
    plan = induction_plan(generate_basis(pam_rule(), P2), P2)
    for o in plan:
        if o.step == ANALYTIC:
            nxt = plan[o.index + 1]
            assert nxt.step == ALGEBRAIC and nxt.symbol == o.symbol
            assert [s.replace("bd2", "bd") for s in o.provides] == nxt.provides
            assert all(c["condition"].startswith("r_2(") for c in o.side_conditions)
    assert any(o.decomposition for o in plan if o.step == ALGEBRAIC)


def test_assumption_gate():
    with pytest.raises(AssumptionFailed, match="Xi\\*Xi"):
        induction_plan([xi(), xi() * xi()], P2)


def test_slack_lowers_recorded_output_degrees():
    B = [xi(), parse_symbol("Xi*I(Xi)", 2)]
    base = induction_plan(B, P2)
    slack = induction_plan(B, P2, slack=Fraction(1, 100))
    assert [o.step for o in base] == [o.step for o in slack]
    out = lambda plan: [Fraction(c["value"]) for o in plan for c in o.side_conditions  # noqa: E731
                        if c["condition"] == "output degree"]
    diffs = {a - b for a, b in zip(out(base), out(slack))}
    assert diffs <= {Fraction(1, 100), Fraction(2, 100)} and diffs


def test_link_guards_forward_references():
    plan = [Obligation(0, "a", PROBABILISTIC, ["bd(b)"], ["bd(a)"]), Obligation(1, "b", PROBABILISTIC, [], ["bd(b)"])]
    with pytest.raises(ScheduleCycle):
        _link(plan)
    with pytest.raises(ScheduleCycle):
        _link([Obligation(0, "a", PROBABILISTIC, ["bd(z)"], ["bd(a)"])])


def test_json_and_dot_outputs():
    plan = induction_plan(generate_basis(pam_rule(), P2), P2)
    records = json.loads(plan_json(plan))
    assert len(records) == len(plan)
    assert set(records[0]) >= {"symbol", "step", "prerequisites", "side_conditions", "rationale"}
    dot = plan_dot(plan)
    assert dot.startswith("digraph plan {") and dot.rstrip().endswith("}")
    n_edges = sum(len(o.prerequisites) for o in plan)
    assert dot.count("->") == n_edges
