"""Command-line entry point: ``renormlab VERB [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 a numeric budget,
tolerance or check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.integrate import IntegrationWarning

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3

log = logging.getLogger("renormlab")


class Invalid(Exception):
    pass


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    d: int = 2
    alpha0: str | None = None
    kappa: str = "1/20"
    grid: int | None = None          # points per direction; 128 in d=2, 32 in d=3 when unset
    L: float = 1.0
    scale_lo: int = -2
    scale_hi: int = 10
    samples: int = 100
    seed: int = 0
    out: str | None = None
    format: str = "json"
    threads: int | None = None

    def validate(self) -> "RunConfig":
        if self.d < 1 or self.d > 3:
            raise Invalid(f"d={self.d} must be 1, 2 or 3")
        try:
            self.params()
        except (ValueError, ZeroDivisionError) as exc:
            raise Invalid(str(exc)) from exc
        if self.grid is not None and (self.grid < 8 or self.grid & (self.grid - 1)):
            raise Invalid(f"grid={self.grid} must be a power of two >= 8")
        if not self.L > 0:
            raise Invalid("L must be positive")
        if self.scale_lo > self.scale_hi:
            raise Invalid("scale window is empty")
        if self.samples < 1:
            raise Invalid("samples must be positive")
        if self.format not in ("json", "csv"):
            raise Invalid(f"unknown format {self.format!r}")
        if self.threads is not None and self.threads < 1:
            raise Invalid("threads must be positive")
        return self

    def params(self):
        from .symbols import DegreeParams

        if self.alpha0 is not None:
            return DegreeParams(self.d, Fraction(str(self.alpha0)))
        return DegreeParams.from_kappa(self.d, Fraction(str(self.kappa)))

    def n(self) -> int:
        return self.grid if self.grid is not None else (128 if self.d <= 2 else 32)

    def grid_obj(self, d: int | None = None, N: int | None = None):
        from .kernels import Grid

        return Grid(N or self.n(), d or self.d, self.L)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_json().items() if k != "out"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise Invalid(f"cannot read config {path}: {exc}") from exc
    if "config" in data and isinstance(data["config"], dict):  # a manifest
        data = data["config"]
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise Invalid(f"unknown config keys: {sorted(unknown)}")
    return data


def _build_config(ns: argparse.Namespace) -> RunConfig:
    base = _load_config(ns.config)
    for name in _CONFIG_FIELDS:
        v = getattr(ns, name, None)
        if v is not None:
            base[name] = v
    if getattr(ns, "alpha0", None) is not None:
        base["alpha0"] = ns.alpha0
    try:
        cfg = RunConfig(**base)
    except TypeError as exc:
        raise Invalid(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------- results


@dataclass
class Result:
    summary: dict
    tables: dict[str, tuple[list[str], list[dict]]] = field(default_factory=dict)
    text: list[str] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)   # extra named text outputs
    failure: str | None = None


def jsonable(x: Any):
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else str(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    return x


def _validate(result: Result) -> None:
    """Tables must have exactly their declared columns with scalar cells; summaries must be JSON."""
    json.dumps(jsonable(result.summary), allow_nan=False)
    if "verb" not in result.summary:
        raise AssertionError("summary lacks the verb field")
    for name, (cols, rows) in result.tables.items():
        if len(set(cols)) != len(cols):
            raise AssertionError(f"table {name} repeats a column")
        for row in rows:
            if list(row) != cols:
                raise AssertionError(f"table {name} row keys {list(row)} differ from {cols}")
            for v in row.values():
                if isinstance(v, (list, dict, tuple)):
                    raise AssertionError(f"table {name} holds a non-scalar cell")


def _csv_text(cols: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: jsonable(v) for k, v in row.items()})
    return buf.getvalue()


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"renormlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _emit(result: Result, cfg: RunConfig, argv: list[str], out=sys.stdout) -> None:
    summary_text = json.dumps(jsonable(result.summary), indent=2, sort_keys=True) + "\n"
    tables = {name: _csv_text(cols, rows) for name, (cols, rows) in result.tables.items()}
    if result.text:
        out.write("\n".join(result.text) + "\n")
    elif cfg.format == "csv" and tables:
        out.write(next(iter(tables.values())))
    else:
        out.write(summary_text)
    if not cfg.out:
        return
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    written = {"summary.json": summary_text}
    written.update({f"{name}.csv": text for name, text in tables.items()})
    written.update(result.files)
    for name, text in written.items():
        (root / name).write_text(text)
    manifest = {
        "argv": argv,
        "config": cfg.to_json(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": {name: _sha(text) for name, text in sorted(written.items())},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- helpers


def _number(q: Fraction):
    return int(q) if q.denominator == 1 else float(q)


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(Fraction(t.strip())) for t in text.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise Invalid(f"bad number list {text!r}") from exc


def _ints(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise Invalid(f"bad integer list {text!r}") from exc


def _lambdas(text: str | None) -> list[float]:
    from .lab.checks import dyadic_scales

    if text is None:
        return dyadic_scales(1, 6)
    if text.startswith("dyadic:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise Invalid("use dyadic:FIRST:LAST")
        return dyadic_scales(int(parts[1]), int(parts[2]))
    return _floats(text)


def _symbol(text: str, params):
    from .lab.chaos import catalogue
    from .symbols import parse_symbol

    named = catalogue(params.d)
    return named[text] if text in named else parse_symbol(text, params)


def _load_graph(path: str | None, d: int):
    from .graphs import FeynGraph

    if not path:
        raise Invalid("--graph FILE is required")
    try:
        return FeynGraph.load(path, None)
    except OSError as exc:
        raise Invalid(f"cannot read graph {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise Invalid(f"graph {path} is not JSON: {exc}") from exc


def _sub(g) -> list[int]:
    return [int(e) for e in g]


# ---------------------------------------------------------------- verbs


def cmd_symbols(ns, cfg: RunConfig) -> Result:
    from .basis import BUILTIN_RULES, basis_records, generate_basis
    from .symbols import degree, degree_value, extended_basis, lc_text, malliavin_D, statistics

    params = cfg.params()
    if ns.basis:
        if ns.basis not in BUILTIN_RULES:
            raise Invalid(f"unknown rule {ns.basis!r}; choose from {sorted(BUILTIN_RULES)}")
        rule = BUILTIN_RULES[ns.basis](Fraction(ns.gamma_max))
        B = generate_basis(rule, params)
        recs = basis_records(B, params)
        summary = {"verb": "symbols", "rule": ns.basis, "count": len(B), "symbols": recs}
        if ns.extended:
            summary["extended"] = [s.text for s in extended_basis(B, params)]
        cols = ["symbol", "degree", "n_xi", "n_edges"]
        return Result(summary, {"basis": (cols, [{c: r[c] for c in cols} for r in recs])})
    if not ns.expr:
        raise Invalid("give --expr or --basis")
    records = []
    for text in ns.expr:
        s = _symbol(text, params)
        st = statistics(s)
        rec = {
            "symbol": s.text,
            "degree": _number(degree_value(s, params)),
            "degree_exact": str(degree_value(s, params)),
            "degree_formal": str(degree(s, params)),
            "n_xi": st.n_xi,
            "n_xidot": st.n_xidot,
            "n_edges": st.n_edges,
        }
        if not st.n_xidot:
            rec["D"] = [[c, t] for c, t in lc_text(malliavin_D(s))]
        records.append(rec)
    summary = dict(records[0]) if len(records) == 1 else {"symbols": records}
    summary["verb"] = "symbols"
    cols = ["symbol", "degree", "n_xi", "n_xidot", "n_edges"]
    return Result(summary, {"symbols": (cols, [{c: r[c] for c in cols} for r in records])})


def cmd_graph(ns, cfg: RunConfig) -> Result:
    from .graphs import enumerate_divergent, forests_of, omega, weinberg_check

    G = _load_graph(ns.graph, cfg.d)
    whole = omega(G, range(len(G.edges)))
    div = enumerate_divergent(G)
    rows = [{"edges": " ".join(map(str, g)), "omega": omega(G, g).omega} for g in div]
    forests = forests_of(G, divergent=div)
    summary = {
        "verb": "graph",
        "omega": whole.omega,
        "divergent": [{"edges": _sub(g), "omega": omega(G, g).omega} for g in div],
        "weinberg": weinberg_check(G),
        "forests": len(forests),
    }
    if ns.list_forests:
        summary["forest_list"] = [[_sub(g) for g in F] for F in forests]
    return Result(summary, {"divergent": (["edges", "omega"], rows)})


def cmd_renorm(ns, cfg: RunConfig) -> Result:
    from .forests import (ForestProducts, bphz_renormalize, forest_sum, maximal_forests, parcimonious,
                          parcimonious_by_forests, subforests, zimmermann_product, ScaleAssignment)
    from .graphs import forests_of
    from .integrand import Integrand

    if ns.suite:
        return _zimmermann_suite(ns)
    G = _load_graph(ns.graph, cfg.d)
    I = Integrand.from_graph(G)
    if ns.check_zimmermann:
        P = ForestProducts(I)
        checked = 0
        for F in forests_of(G):
            lhs = forest_sum(I, subforests(F), ns.strict, products=P)
            if lhs != zimmermann_product(I, F, ns.strict):
                raise CheckFailed(f"Zimmermann identity fails for forest {[_sub(g) for g in F]}")
            checked += 1
        R = bphz_renormalize(I, ns.strict)
        text = R.to_text()
        return Result({"verb": "renorm", "identity": "exact", "forests_checked": checked, "integrand": text},
                      text=["identity: exact", text])
    if ns.mode == "bphz":
        R = bphz_renormalize(I, ns.strict)
    elif ns.mode == "zimmermann":
        if ns.forest:
            try:
                F = [tuple(sorted(int(e) for e in g)) for g in json.loads(ns.forest)]
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise Invalid(f"--forest must be a JSON list of edge lists: {exc}") from exc
        else:
            top = maximal_forests(G)
            F = list(top[0]) if top else []
        R = zimmermann_product(I, F, ns.strict)
    else:
        scales = _ints(ns.mu)
        if scales is None or len(scales) != len(G.edges):
            raise Invalid(f"--mu needs {len(G.edges)} comma-separated scales")
        mu = ScaleAssignment(tuple(scales), min(cfg.scale_lo, min(scales)), max(cfg.scale_hi, max(scales)))
        R = parcimonious(I, mu, ns.strict)
        if R != parcimonious_by_forests(I, mu, ns.strict):
            raise CheckFailed("parcimonious product and forest sum disagree")
    text = R.to_text()
    return Result({"verb": "renorm", "mode": ns.mode, "terms": len(R.terms), "integrand": text}, text=[text])


def _zimmermann_suite(ns) -> Result:
    import random
    import time

    from .forests import ForestProducts, forest_sum, subforests, zimmermann_product
    from .graphs import forests_of, graph_suite, suite_graph
    from .integrand import Integrand

    rng = random.Random(ns.suite_seed)
    exps = [Fraction(1, 2), Fraction(2, 3), Fraction(1), Fraction(4, 3), Fraction(3, 2)]
    t0 = time.perf_counter()
    graphs = forests = failures = 0
    for n, edges, ext in graph_suite():
        G = suite_graph(n, edges, ext, [rng.choice(exps) for _ in edges])
        I = Integrand.from_graph(G)
        P = ForestProducts(I)
        graphs += 1
        for F in forests_of(G):
            forests += 1
            if forest_sum(I, subforests(F), products=P) != zimmermann_product(I, F):
                failures += 1
    summary = {"verb": "renorm", "graphs": graphs, "forests": forests, "failures": failures,
               "identity": "exact" if not failures else "violated", "seconds": time.perf_counter() - t0}
    res = Result(summary, text=[f"identity: {summary['identity']} ({graphs} graphs, {forests} forests)"])
    if failures:
        res.failure = f"{failures} forests violate the Zimmermann identity"
    return res


def cmd_scales(ns, cfg: RunConfig) -> Result:
    import random

    from .forests import ScaleAssignment, classify_forests, forest_family, gn_tree, safe_dangerous
    from .graphs import enumerate_divergent, forests_of

    G = _load_graph(ns.graph, cfg.d)
    m = len(G.edges)
    if ns.mu:
        scales = _ints(ns.mu)
        if len(scales) != m:
            raise Invalid(f"--mu needs {m} scales")
        mus = [ScaleAssignment(tuple(scales), min(cfg.scale_lo, min(scales)), max(cfg.scale_hi, max(scales)))]
    else:
        rng = random.Random(cfg.seed)
        mus = [ScaleAssignment.random(m, rng, cfg.scale_lo, cfg.scale_hi) for _ in range(ns.random)]
    div = enumerate_divergent(G)
    forests = forests_of(G, divergent=div)
    rows, reports = [], []
    ok = True
    for mu in mus:
        tree = gn_tree(G, mu)
        cls = classify_forests(G, mu, forests, div)
        ok &= cls.ok
        for F in forests:
            sd = safe_dangerous(G, F, mu, div)
            rows.append({"mu": " ".join(map(str, mu.scales)),
                         "forest": ";".join(" ".join(map(str, g)) for g in F),
                         "safe": ";".join(" ".join(map(str, g)) for g in sorted(sd.safe)),
                         "dangerous": ";".join(" ".join(map(str, g)) for g in sorted(sd.dangerous)),
                         "safe_plus": ";".join(" ".join(map(str, g)) for g in sorted(sd.safe_plus))})
        reports.append({
            "mu": list(mu.scales),
            "gn_tree": [{"level": i, "edges": _sub(c)} for i, c in tree.nodes()],
            "divergent_components": [_sub(c) for c in forest_family(G, mu)],
            "blocks": len(cls.blocks),
            "idempotent": cls.idempotent,
            "sandwich": cls.sandwich,
            "closure_is_forest": cls.closure_is_forest,
        })
    res = Result({"verb": "scales", "assignments": reports, "classification_ok": ok},
                 {"forests": (["mu", "forest", "safe", "dangerous", "safe_plus"], rows)})
    if not ok:
        res.failure = "forest classification check failed"
    return res


def cmd_kernels(ns, cfg: RunConfig) -> Result:
    from .kernels import SLICE_CONSTANT, SLICE_DECAY, fit_slice_constant, green_kernel, hadamard_finite_part, \
        scale_slice, slice_table

    d = cfg.d
    if ns.mode == "table":
        radii = np.linspace(0, ns.rmax, ns.radii)
        rows = slice_table(d, range(cfg.scale_lo, min(cfg.scale_hi, 8) + 1), radii)
        worst = max(r["ratio"] for r in rows)
        res = Result({"verb": "kernels", "mode": "table", "d": d, "c": SLICE_DECAY, "C": SLICE_CONSTANT,
                      "max_ratio": worst, "bound_holds": worst <= 1},
                     {"slices": (["i", "r", "K_i", "envelope", "ratio"], rows)})
        if worst > 1:
            res.failure = "slice envelope exceeded"
        return res
    if ns.mode == "sum":
        rows = []
        for r in np.geomspace(0.05, 3, ns.radii):
            total = math.fsum(scale_slice(float(r), i, d) for i in range(cfg.scale_lo, cfg.scale_hi + 1))
            K = green_kernel(float(r), d)
            rows.append({"r": float(r), "sum": total, "K": K, "rel_error": abs(total - K) / K})
        return Result({"verb": "kernels", "mode": "sum", "d": d, "max_rel_error": max(r["rel_error"] for r in rows)},
                      {"sum": (["r", "sum", "K", "rel_error"], rows)})
    if ns.mode == "fit-constant":
        return Result({"verb": "kernels", "mode": "fit-constant", "d": d, "c": SLICE_DECAY,
                       "fitted": fit_slice_constant(d), "frozen": SLICE_CONSTANT})
    funcs: dict[str, tuple[Callable, Callable]] = {
        "gaussian": (lambda y: np.exp(-np.sum(y * y, axis=1)),
                     lambda k: _gauss_jet(k)),
        "one": (lambda y: np.ones(len(y)), lambda k: 0.0),
    }
    if ns.function not in funcs:
        raise Invalid(f"unknown function {ns.function!r}")
    f, jet = funcs[ns.function]
    val = hadamard_finite_part(f, ns.beta, d, ns.R, jet=jet)
    return Result({"verb": "kernels", "mode": "finite-part", "d": d, "beta": ns.beta, "R": ns.R,
                   "function": ns.function, "value": val})


def _gauss_jet(k) -> float:
    # derivatives of exp(-|y|^2) at 0 factor over coordinates: H_m(0) (-1)^m
    out = 1.0
    for m in k:
        if m % 2:
            return 0.0
        out *= (-1) ** (m // 2) * math.factorial(m) / math.factorial(m // 2)
    return out


def cmd_model(ns, cfg: RunConfig) -> Result:
    from .lab.noise import MCSpec

    mc = MCSpec(cfg.samples, cfg.seed, ns.tolerance)
    demo = ns.demo
    handler = _MODEL_DEMOS.get(demo)
    if handler is None:
        raise Invalid(f"unknown demo {demo!r}; choose from {sorted(_MODEL_DEMOS)}")
    return handler(ns, cfg, mc)


_TRACE = ["kind", "eps", "lambda", "estimate", "stderr"]


def _demo_divergence(ns, cfg, mc) -> Result:
    from .lab.checks import divergence_demo

    eps = _floats(ns.eps) or [0.2, 0.1, 0.05, 0.025]
    N = cfg.grid or 256
    rep = divergence_demo(ns.beta, eps, N=N, L=cfg.L)
    rows = [{"kind": "tadpole", "eps": e, "lambda": "", "estimate": t, "stderr": 0.0} for e, t in zip(rep.eps, rep.tadpole)]
    rows += [{"kind": "renormalized", "eps": e, "lambda": "", "estimate": v, "stderr": 0.0}
             for e, v in zip(rep.eps, rep.renormalized)]
    rows.append({"kind": "slope_vs_eps", "eps": "", "lambda": "", "estimate": -rep.fit.slope, "stderr": rep.fit.stderr})
    summary = {"verb": "model", "demo": "divergence", "beta": ns.beta, "grid": N,
               "slope": -rep.fit.slope, "slope_ci": [-rep.fit.ci[1], -rep.fit.ci[0]],
               "slope_inverse_eps": rep.fit.slope, "ratios": list(rep.ratios), "cauchy": rep.cauchy,
               "limit": rep.limit}
    res = Result(summary, {"trace": (_TRACE, rows)})
    if not rep.cauchy:
        res.failure = "renormalized pairing is not Cauchy in eps"
    return res


def _demo_noise(ns, cfg, mc) -> Result:
    from .lab.noise import sample_white_noise

    grid = cfg.grid_obj()
    rows = []
    for j in mc.streams():
        xi = sample_white_noise(grid, mc.seed, j).xi.values
        rows.append({"sample": j, "mean": float(xi.mean()), "variance_hd": float(xi.var() * grid.cell)})
    m = np.array([r["mean"] for r in rows])
    v = np.array([r["variance_hd"] for r in rows])
    return Result({"verb": "model", "demo": "noise", "mean": float(m.mean()), "variance_hd": float(v.mean())},
                  {"noise": (["sample", "mean", "variance_hd"], rows)})


def _demo_scaling(ns, cfg, mc) -> Result:
    from .lab.checks import noise_pairings, polynomial_pairings, scaling_fit, symbol_pairings
    from .lab.interpret import Character
    from .symbols import POLY, degree_value, xi

    params = cfg.params()
    tree = (ns.tree or ["Xi"])[0]
    tau = _symbol(tree, params)
    lams = _lambdas(ns.lambda_grid)
    grid = cfg.grid_obj(N=cfg.grid or 256 if tau is xi() else cfg.n())
    eps = (_floats(ns.eps) or [None])[0]
    if tau.kind == POLY:
        moments = polynomial_pairings(tau.k, lams)
    elif tau is xi():
        moments = noise_pairings(grid, lams, mc, eps)
    else:
        ch = Character.load(ns.character_file, params) if ns.character_file else None
        moments = symbol_pairings(tau, grid, lams, mc, params, eps if eps else 0.1, ch)
    fit = scaling_fit(lams, moments)
    rows = [{"kind": "rms", "eps": eps if eps else "", "lambda": lam, "estimate": v, "stderr": e}
            for lam, v, e in zip(fit.scales, fit.values, fit.errors)]
    return Result({"verb": "model", "demo": "scaling", "tree": tau.text, "slope": fit.slope, "ci": list(fit.ci),
                   "degree": degree_value(tau, params), "renormalized": bool(ns.character_file)},
                  {"trace": (_TRACE, rows)})


def _demo_character(ns, cfg, mc) -> Result:
    from .lab.interpret import bphz_characters

    params = cfg.params()
    syms = [_symbol(t, params) for t in (ns.tree or ["Xi*I(Xi)"])]
    eps = (_floats(ns.eps) or [0.1])[0]
    ch = bphz_characters(syms, eps, mc, cfg.grid_obj(N=cfg.grid or 64), params)
    rows = [{"kind": s.text, "eps": eps, "lambda": "", "estimate": v, "stderr": ch.stderr.get(s, 0.0)}
            for s, v in sorted(ch.values.items(), key=lambda p: p[0].text)]
    doc = json.dumps(ch.to_json(), indent=2, sort_keys=True) + "\n"
    return Result({"verb": "model", "demo": "character", "eps": eps, "values": ch.to_json(),
                   "stderr": {s.text: e for s, e in ch.stderr.items()}},
                  {"trace": (_TRACE, rows)}, files={"character.json": doc})


def _demo_chaos(ns, cfg, mc) -> Result:
    from .lab.chaos import chaos_pairing, monte_carlo_pairing

    tree = (ns.tree or ["tripod"])[0]
    eps = _floats(ns.eps) or [0.2, 0.1]
    e1, e2 = eps[0], (eps[1] if len(eps) > 1 else None)
    grid = cfg.grid_obj(2, cfg.grid or 64)
    x = tuple(_floats(ns.x) or (0.5, 0.5))
    lam = (_floats(ns.lambda_grid) or [0.125])[0]
    rep = chaos_pairing(tree, e1, e2, grid, x, lam)
    mcr = monte_carlo_pairing(tree, e1, e2, grid, x, lam, mc, first_order=rep.first_order)
    agree = abs(rep.total - mcr["mean_square"]) <= 3 * mcr["stderr"]
    rows = [{"kind": f"order_{m}", "eps": e1, "lambda": lam, "estimate": v, "stderr": 0.0}
            for m, v in sorted(rep.orders.items())]
    rows.append({"kind": "monte_carlo", "eps": e1, "lambda": lam, "estimate": mcr["mean_square"],
                 "stderr": mcr["stderr"]})
    summary = {"verb": "model", "demo": "chaos", "tree": rep.symbol, "orders": rep.orders, "total": rep.total,
               "monte_carlo": mcr, "agree": agree,
               "kernels": {m: [{"coefficient": c, "free": [list(map(list, p)) for p in f]} for c, f in terms]
                           for m, terms in rep.kernels.items()}}
    res = Result(summary, {"trace": (_TRACE, rows)})
    if not agree:
        res.failure = "quadrature and Monte Carlo disagree beyond 3 standard errors"
    return res


def _demo_poincare(ns, cfg, mc) -> Result:
    from .lab.checks import poincare_check
    from .lab.noise import rescaled_test

    grid = cfg.grid_obj(2, cfg.grid or 64)
    phi = rescaled_test(grid, (0.5, 0.5), 0.25)
    rows, out, ok = [], {}, True
    for name in (ns.functional or ["linear", "square", "cosine"]):
        try:
            r = poincare_check(name, [phi], grid, mc)
        except KeyError as exc:
            raise Invalid(str(exc)) from exc
        ok &= r.holds
        out[name] = {"variance": r.variance, "variance_stderr": r.variance_stderr, "energy": r.energy,
                     "energy_stderr": r.energy_stderr, "holds": r.holds}
        rows.append({"functional": name, "variance": r.variance, "variance_stderr": r.variance_stderr,
                     "energy": r.energy, "energy_stderr": r.energy_stderr})
    res = Result({"verb": "model", "demo": "poincare", "norm_sq": float(r.gram[0, 0]), "results": out},
                 {"poincare": (["functional", "variance", "variance_stderr", "energy", "energy_stderr"], rows)})
    if not ok:
        res.failure = "variance exceeds the derivative energy"
    return res


def _demo_malliavin(ns, cfg, mc) -> Result:
    from .lab.chaos import catalogue
    from .lab.checks import malliavin_identity_check, random_direction
    from .lab.noise import sample_white_noise

    params = cfg.params()
    grid = cfg.grid_obj(N=cfg.grid or 64)
    taus = [_symbol(t, params) for t in ns.tree] if ns.tree else list(catalogue(cfg.d).values())
    eps = (_floats(ns.eps) or [0.1])[0]
    xi = sample_white_noise(grid, cfg.seed).xi
    rows = []
    for tau in taus:
        dev = max(malliavin_identity_check(tau, random_direction(grid, cfg.seed + s), eps, xi)
                  for s in range(ns.directions))
        rows.append({"symbol": tau.text, "deviation": dev})
    worst = max(r["deviation"] for r in rows)
    res = Result({"verb": "model", "demo": "malliavin", "max_deviation": worst, "tolerance": 1e-8},
                 {"malliavin": (["symbol", "deviation"], rows)})
    if worst > 1e-8:
        res.failure = "Malliavin identity deviation above 1e-8"
    return res


def _demo_decomposition(ns, cfg, mc) -> Result:
    from .lab.checks import derivative_decomposition_demo, random_direction

    grid = cfg.grid_obj(3, cfg.grid or 32)
    h = random_direction(grid, cfg.seed, 0.15)
    eps = (_floats(ns.eps) or [None])[0]
    rep = derivative_decomposition_demo(h, eps, mc)
    rows = []
    summary = {"verb": "model", "demo": "decomposition"}
    for name in ("a_increment", "b_naive_increment", "b_taylor_increment", "b_plus", "c_term"):
        fit = getattr(rep, name)
        summary[name] = {"slope": fit.slope, "ci": list(fit.ci)}
        rows.append({"quantity": name, "slope": fit.slope, "ci_low": fit.ci[0], "ci_high": fit.ci[1]})
    return Result(summary, {"decomposition": (["quantity", "slope", "ci_low", "ci_high"], rows)})


def _demo_pointed(ns, cfg, mc) -> Result:
    from .lab.checks import pointed_norm_archetype, sine_jet

    x = tuple(_floats(ns.x) or (0.3, 0.17))
    rep = pointed_norm_archetype(sine_jet(), x, ns.gamma, ns.nu, ns.p)
    rows = [{"lambda": lam, "local_sup": a, "local_p": b, "ball_volume": v}
            for lam, a, b, v in zip(rep.lambdas, rep.local_sup, rep.local_p, rep.ball_volume)]
    return Result({"verb": "model", "demo": "pointed", "gamma": ns.gamma, "nu": ns.nu, "p": ns.p,
                   "improvement_exponent": rep.improvement.slope if rep.improvement else None,
                   "expected": ns.nu - ns.gamma, "global_constant": rep.global_constant},
                  {"pointed": (["lambda", "local_sup", "local_p", "ball_volume"], rows)})


_MODEL_DEMOS = {
    "divergence": _demo_divergence,
    "noise": _demo_noise,
    "scaling": _demo_scaling,
    "character": _demo_character,
    "chaos": _demo_chaos,
    "poincare": _demo_poincare,
    "malliavin": _demo_malliavin,
    "decomposition": _demo_decomposition,
    "pointed": _demo_pointed,
}


def cmd_plan(ns, cfg: RunConfig) -> Result:
    from .basis import BUILTIN_RULES, generate_basis
    from .schedule import induction_plan, plan_dot

    params = cfg.params()
    if ns.basis:
        try:
            with open(ns.basis) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise Invalid(f"cannot read basis {ns.basis}: {exc}") from exc
        texts = doc.get("symbols") if isinstance(doc, dict) else doc
        if not isinstance(texts, list):
            raise Invalid("basis JSON must be a list of symbols or {\"symbols\": [...]}")
        B = [_symbol(t, params) for t in texts]
    else:
        rule = ns.rule or "pam"
        if rule not in BUILTIN_RULES:
            raise Invalid(f"unknown rule {rule!r}")
        B = generate_basis(BUILTIN_RULES[rule](Fraction(ns.gamma_max)), params)
    plan = induction_plan(B, params, Fraction(str(ns.slack)))
    records = [ob.record() for ob in plan]
    rows = [{"index": ob.index, "symbol": ob.symbol, "step": ob.step,
             "prerequisites": " ".join(map(str, ob.prerequisites))} for ob in plan]
    return Result({"verb": "plan", "obligations": records}, {"plan": (["index", "symbol", "step", "prerequisites"], rows)},
                  files={"plan.dot": plan_dot(plan), "plan.json": json.dumps(jsonable(records), indent=2) + "\n"})


def cmd_replay(ns, cfg: RunConfig) -> Result:
    try:
        with open(ns.manifest) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise Invalid(f"cannot read manifest {ns.manifest}: {exc}") from exc
    argv = list(manifest["argv"])
    with tempfile.TemporaryDirectory() as tmp:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = tmp
        else:
            argv += ["--out", tmp]
        code = main(argv, stdout=io.StringIO())
        fresh = json.loads((Path(tmp) / "manifest.json").read_text()) if code == 0 else {"outputs": {}}
    same = fresh["outputs"] == manifest["outputs"]
    res = Result({"verb": "replay", "exit_code": code, "identical": same, "outputs": sorted(manifest["outputs"])})
    if not same:
        res.failure = "replayed outputs differ from the manifest"
    return res


# ---------------------------------------------------------------- parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON file mirroring the run configuration (or a manifest)")
    g.add_argument("--d", type=int, help="ambient dimension")
    g.add_argument("--alpha0", help="noise regularity, e.g. -1.05 or -21/20")
    g.add_argument("--kappa", help="alpha0 = -d/2 - kappa when --alpha0 is absent (default 1/20)")
    g.add_argument("--grid", type=int, help="grid points per direction")
    g.add_argument("--L", type=float, help="torus side")
    g.add_argument("--scale-lo", dest="scale_lo", type=int, help="lowest dyadic scale")
    g.add_argument("--scale-hi", dest="scale_hi", type=int, help="highest dyadic scale")
    g.add_argument("--seeds", "--samples", dest="samples", type=int, help="Monte Carlo samples")
    g.add_argument("--seed", type=int, help="base seed")
    g.add_argument("--out", help="directory for outputs and the manifest")
    g.add_argument("--format", choices=["json", "csv"], help="stdout format")
    g.add_argument("--threads", type=int, help="FFT worker cap (sets RENORM_THREADS)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    top = argparse.ArgumentParser(prog="renormlab", description=__doc__,
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="verb", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("symbols", parents=[common], formatter_class=raw,
                       help="parse symbols, degrees, derivatives and bases",
                       epilog="CSV columns: symbol, degree, n_xi, n_xidot, n_edges (expressions); "
                              "symbol, degree, n_xi, n_edges (basis)")
    p.add_argument("--expr", action="append", help="symbol expression, e.g. 'Xi*I(Xi)' (repeatable)")
    p.add_argument("--basis", help="generate the basis of a built-in rule (pam, phi4)")
    p.add_argument("--gamma-max", dest="gamma_max", default="2", help="degree cutoff for --basis")
    p.add_argument("--extended", action="store_true", help="also list the derivative symbols")
    p.set_defaults(fn=cmd_symbols)

    p = sub.add_parser("graph", parents=[common], formatter_class=raw,
                       help="superficial degrees, divergent subgraphs and forests",
                       epilog="CSV columns: edges, omega")
    p.add_argument("--graph", help="graph JSON file")
    p.add_argument("--list-forests", dest="list_forests", action="store_true")
    p.set_defaults(fn=cmd_graph)

    p = sub.add_parser("renorm", parents=[common], formatter_class=raw,
                       help="BPHZ, Zimmermann and parcimonious renormalization of a graph",
                       epilog="prints the canonical integrand text")
    p.add_argument("--graph", help="graph JSON file")
    p.add_argument("--mode", choices=["bphz", "zimmermann", "parcimonious"], default="bphz")
    p.add_argument("--forest", help="JSON list of edge lists for --mode zimmermann")
    p.add_argument("--mu", help="comma-separated edge scales for --mode parcimonious")
    p.add_argument("--strict", action="store_true", help="Taylor order |k| < omega instead of <=")
    p.add_argument("--check-zimmermann", dest="check_zimmermann", action="store_true",
                   help="verify the forest-sum identity for every forest")
    p.add_argument("--suite", action="store_true", help="check the identity on the generated graph suite")
    p.add_argument("--suite-seed", dest="suite_seed", type=int, default=7)
    p.set_defaults(fn=cmd_renorm)

    p = sub.add_parser("scales", parents=[common], formatter_class=raw,
                       help="scale trees and safe/dangerous forest classification",
                       epilog="CSV columns: mu, forest, safe, dangerous, safe_plus")
    p.add_argument("--graph", help="graph JSON file")
    p.add_argument("--mu", help="comma-separated edge scales")
    p.add_argument("--random", type=int, default=5, help="number of random assignments when --mu is absent")
    p.set_defaults(fn=cmd_scales)

    p = sub.add_parser("kernels", parents=[common], formatter_class=raw,
                       help="dyadic slices, the slice envelope and finite parts",
                       epilog="CSV columns: i, r, K_i, envelope, ratio (table); r, sum, K, rel_error (sum)")
    p.add_argument("--mode", choices=["table", "sum", "fit-constant", "finite-part"], default="table")
    p.add_argument("--rmax", type=float, default=3.0)
    p.add_argument("--radii", type=int, default=31)
    p.add_argument("--beta", type=float, default=2.5)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--function", default="gaussian", help="finite-part test function: gaussian or one")
    p.set_defaults(fn=cmd_kernels)

    p = sub.add_parser("model", parents=[common], formatter_class=raw,
                       help="noise, models, characters, fits and demos",
                       epilog="CSV columns: kind, eps, lambda, estimate, stderr for traces; "
                              "demo-specific tables otherwise")
    p.add_argument("--demo", default="scaling", help=", ".join(sorted(_MODEL_DEMOS)))
    p.add_argument("--tree", action="append", help="symbol or catalogue name (repeatable)")
    p.add_argument("--eps", "--eps-list", dest="eps", help="comma-separated mollification scales")
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma list or dyadic:FIRST:LAST")
    p.add_argument("--character-file", dest="character_file", help="JSON symbol -> value")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--x", help="base point, comma-separated")
    p.add_argument("--functional", action="append", help="linear, square or cosine (repeatable)")
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--nu", type=int, default=4)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tolerance", type=float, help="largest acceptable Monte Carlo standard error")
    p.set_defaults(fn=cmd_model)

    p = sub.add_parser("plan", parents=[common], formatter_class=raw,
                       help="obligation schedule of the inductive argument",
                       epilog="CSV columns: index, symbol, step, prerequisites; also writes plan.dot")
    p.add_argument("--basis", help="JSON list of symbols")
    p.add_argument("--rule", help="built-in rule when --basis is absent (pam, phi4)")
    p.add_argument("--gamma-max", dest="gamma_max", default="2")
    p.add_argument("--slack", default="0", help="slack subtracted from alpha0 in output degrees")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_replay)
    return top


def _failure_codes():
    from .basis import BudgetExceeded as BasisBudget
    from .graphs import BudgetExceeded as GraphBudget
    from .graphs import GraphError
    from .kernels import QuadratureError
    from .lab.interpret import ToleranceExceeded
    from .quadrature import NonIntegrable

    budget = (BasisBudget, GraphBudget, QuadratureError, ToleranceExceeded, NonIntegrable, CheckFailed)
    invalid = (Invalid, GraphError, ValueError, KeyError, ZeroDivisionError)
    return budget, invalid


def _attach_negatives(argv: list[str]) -> list[str]:
    """Let option values such as ``--alpha0 -3/2`` or ``--mu -1,4`` through argparse."""
    out: list[str] = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and len(tok) > 1 \
                and tok[0] == "-" and (tok[1].isdigit() or tok[1] == "."):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv: list[str] | None = None, stdout=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(_attach_negatives(argv))
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not ns.verbose:
        warnings.simplefilter("ignore", IntegrationWarning)
    budget, invalid = _failure_codes()
    try:
        cfg = _build_config(ns)
        if cfg.threads:
            os.environ["RENORM_THREADS"] = str(cfg.threads)
        result = ns.fn(ns, cfg)
        _validate(result)
        _emit(result, cfg, argv, stdout)
    except budget as exc:
        print(f"renormlab: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except invalid as exc:
        print(f"renormlab: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if result.failure:
        print(f"renormlab: {result.failure}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
