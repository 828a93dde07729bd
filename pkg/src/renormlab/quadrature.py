"""Numeric evaluation of symbolic integrands on the torus.

External vertices sit at fixed points; every integrated vertex ranges over
[0, L)^d.  Kernels and test functions are bound by name to callables:

* kernel(z, deriv, scale) with z of shape (..., d), minimal-image displacement;
* test(x, deriv) with x of shape (..., d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .integrand import Integrand, Kern, Mono
from .kernels import KernelSpec, radial_value, scale_slice


class UnboundKernel(KeyError):
    pass


class NonIntegrable(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    method: str = "grid"        # "grid" or "mc"
    points: int = 16            # grid points per direction and integrated vertex
    samples: int = 20000        # Monte Carlo draws
    batch: int = 4096
    seed: int = 0
    L: float = 1.0
    refinements: int = 3
    growth: float = 1.5         # per-refinement growth factor that flags a singularity

    def __post_init__(self):
        if self.method not in ("grid", "mc"):
            raise ValueError(f"unknown quadrature method {self.method!r}")


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    method: str
    evaluations: int


def bind(K: KernelSpec) -> Callable:
    """Kernel binding from a radial spec; slices are taken when a factor carries a scale."""

    def kernel(z, deriv=(), scale=None):
        if deriv and any(deriv):
            raise ValueError("radial bindings do not provide derivatives")
        r = np.sqrt(np.sum(z * z, axis=-1))
        if scale is None:
            return radial_value(K, r)
        flat = r.ravel()
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.array([scale_slice(x, scale, K.d) for x in uniq])
        return vals[inv].reshape(r.shape)

    return kernel


def _torus(u, L):
    return u - L * np.round(u / L)


def _term_values(term, coords, kernels, tests, L):
    out = 1.0
    for f in term:
        if isinstance(f, Kern):
            fn = kernels.get(f.kernel)
            if fn is None:
                raise UnboundKernel(f"kernel {f.kernel!r} is not bound")
            z = _torus(coords[f.p] - coords[f.q], L)
            out = out * fn(z, f.deriv, f.scale)
        elif isinstance(f, Mono):
            z = _torus(coords[f.p] - coords[f.q], L)
            for i, m in enumerate(f.power):
                if m:
                    out = out * z[..., i] ** m
        else:
            fn = tests.get(f.name)
            if fn is None:
                raise UnboundKernel(f"test function {f.name!r} is not bound")
            out = out * fn(coords[f.p], f.deriv)
    return out


def _integrate(I: Integrand, coords, kernels, tests, L):
    total = 0.0
    for term, c in I.terms.items():
        total = total + float(c) * _term_values(term, coords, kernels, tests, L)
    return total


def _externals(I: Integrand, externals, d):
    G = I.graph
    pts = {}
    for v in range(G.n_ext):
        if externals is None or v not in externals:
            pts[v] = np.zeros(d)
        else:
            pts[v] = np.asarray(externals[v], dtype=float)
    return pts


def _grid_value(I, kernels, tests, externals, M, L):
    G = I.graph
    d = G.d
    n = G.n_int
    h = L / M
    coords = dict(_externals(I, externals, d))
    for j, v in enumerate(G.integrated()):
        # distinct fractional offsets keep integrated vertices off each other and off lattice externals
        axis = (np.arange(M) + (j + 1) / (n + 2)) * h
        cell = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        shape = [1] * n + [d]
        shape[j] = cell.shape[0]
        coords[v] = cell.reshape(shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = _integrate(I, coords, kernels, tests, L)
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonIntegrable("integrand is infinite at a quadrature node")
    return math.fsum(np.broadcast_to(vals, vals.shape).ravel()) * h ** (d * n), int(max(vals.size, 1))


def evaluate(I: Integrand, kernels: Mapping[str, Callable], tests: Mapping[str, Callable] | None = None,
             externals: Mapping[int, Sequence[float]] | None = None,
             spec: QuadratureSpec = QuadratureSpec()) -> Estimate:
    """Numeric value of ``I`` with an error estimate.

    The grid method refines ``spec.refinements`` times, doubling the points;
    the reported error is the last change.  A value that keeps growing by more
    than ``spec.growth`` per refinement is flagged as non-integrable.
    """
    tests = tests or {}
    if I.is_zero():
        return Estimate(0.0, 0.0, spec.method, 0)
    G = I.graph
    L = spec.L
    if G.n_int == 0:
        coords = _externals(I, externals, G.d)
        val = float(_integrate(I, coords, kernels, tests, L))
        return Estimate(val, 0.0, spec.method, 1)
    if spec.method == "grid":
        history = []
        count = 0
        for level in range(spec.refinements):
            v, c = _grid_value(I, kernels, tests, externals, spec.points * 2 ** level, L)
            history.append(v)
            count += c
        ratios = [abs(b) / abs(a) if a else math.inf for a, b in zip(history, history[1:])]
        if ratios and all(r > spec.growth for r in ratios):
            raise NonIntegrable(f"values {history} grow under refinement")
        err = abs(history[-1] - history[-2]) if len(history) > 1 else math.nan
        return Estimate(history[-1], err, "grid", count)
    rng = np.random.default_rng(spec.seed)
    d, n = G.d, G.n_int
    base = _externals(I, externals, d)
    vol = L ** (d * n)
    s1 = s2 = 0.0
    done = 0
    while done < spec.samples:
        b = min(spec.batch, spec.samples - done)
        coords = dict(base)
        for v in G.integrated():
            coords[v] = rng.uniform(0, L, size=(b, d))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.broadcast_to(np.asarray(_integrate(I, coords, kernels, tests, L), dtype=float), (b,))
        if not np.all(np.isfinite(vals)):
            raise NonIntegrable("integrand is infinite at a sample")
        s1 += math.fsum(vals)
        s2 += math.fsum(vals * vals)
        done += b
    mean = s1 / done
    var = max(s2 / done - mean * mean, 0.0)
    return Estimate(vol * mean, vol * math.sqrt(var / done), "mc", done)
