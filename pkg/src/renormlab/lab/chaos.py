"""Wiener chaos kernels for a small catalogue of trees and their Ito pairings.

Grid conventions make every identity exact at the discrete level: the noise
has covariance delta/h^d, I_1(f) = h^d sum f xi, and convolutions carry h^d.
Hence E[P^2] = sum_m m! |sym f^m|^2 holds exactly for the pairing P of a
naive interpretation with a test function.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from ..kernels import Grid, KernelSpec, fft_workers, green, kernel_array, mollifier, sample
from ..symbols import PLANTED, XI, Symbol, parse_symbol, planted, product, xi
from .interpret import interpret_naive
from .noise import MCSpec, rescaled_test, sample_white_noise


class OutsideCatalogue(ValueError):
    pass


def catalogue(d: int = 2, k: Sequence[int] | None = None) -> dict[str, Symbol]:
    """The supported trees: noise, the cherry, and the three-noise tree with derivative edges."""
    k = tuple(k) if k is not None else (1,) + (0,) * (d - 1)
    leaf = planted(xi(), k)
    return {
        "noise": xi(),
        "cherry": product([xi(), planted(xi(), d=d)]),
        "tripod": product([xi(), planted(product([leaf, leaf]), d=d)]),
    }


# ---------------------------------------------------------------- structure


def leaf_paths(tau: Symbol, path=()) -> list[tuple]:
    """Edge decorations from each noise leaf down to the root."""
    out = []
    for f in tau.factors():
        if f.kind == XI:
            out.append(path)
        elif f.kind == PLANTED:
            out.extend(leaf_paths(f.children[0], (f.k,) + path))
        elif f.kind != "poly":
            raise OutsideCatalogue(f"{tau.text} contains {f.text}")
    return out


@dataclass(frozen=True)
class WickTerm:
    coefficient: int
    contracted: tuple  # pairs of leaf paths
    free: tuple        # leaf paths left as chaos arguments


def _pairings(items):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for j in range(len(rest)):
        for tail in _pairings(rest[:j] + rest[j + 1:]):
            yield ((first, rest[j]),) + tail


def wick_terms(tau: Symbol) -> dict[int, list[WickTerm]]:
    """Chaos kernels as classes of partial Wick contractions.

    Contractions giving the same multiset of contracted path pairs and free
    paths are merged and counted; the count is the coefficient.
    """
    paths = leaf_paths(tau)
    n = len(paths)
    out: dict[int, list[WickTerm]] = {}
    for m in range(n, -1, -1):
        if (n - m) % 2:
            out[m] = []
            continue
        classes: Counter = Counter()
        for contracted in itertools.combinations(range(n), n - m):
            free = tuple(sorted(paths[i] for i in range(n) if i not in contracted))
            for pairs in _pairings(list(contracted)):
                key = (tuple(sorted(tuple(sorted((paths[a], paths[b]))) for a, b in pairs)), free)
                classes[key] += 1
        out[m] = [WickTerm(c, pairs, free) for (pairs, free), c in sorted(classes.items())]
    return out


# ---------------------------------------------------------------- numerics


class _Ops:
    """Grid convolution and correlation with the h^d weight."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.w = fft_workers()

    def fft(self, a):
        return sfft.fftn(a, workers=self.w)

    def ifft(self, a):
        return np.real(sfft.ifftn(a, workers=self.w))

    def conv(self, f, g):
        return self.ifft(self.fft(f) * self.fft(g)) * self.grid.cell

    def corr(self, f, g):
        """u -> h^d sum_w f(u + w) g(w)."""
        return self.ifft(self.fft(f) * np.conj(self.fft(g))) * self.grid.cell

    def dot(self, f, g):
        return float(math.fsum((f * g).ravel()) * self.grid.cell)


@dataclass
class _Leaves:
    rho: np.ndarray      # mollifier on the grid
    K: np.ndarray        # kernel
    G: np.ndarray        # d^k K * rho
    Krho: np.ndarray     # K * rho


def _leaves(ops: _Ops, eps: float, kernel: KernelSpec, k) -> _Leaves:
    grid = ops.grid
    rho = sample(mollifier(eps, grid.d), grid)
    K = kernel_array(kernel, grid)
    Kk = kernel_array(kernel.differentiated(k), grid)
    return _Leaves(rho, K, ops.conv(Kk, rho), ops.conv(K, rho))


def _shift_matrix(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray, N: int, d: int) -> np.ndarray:
    """M[i, j] = arr(rows[i] - cols[j]) with periodic indices (rows, cols as (n, d) integer arrays)."""
    idx = tuple((rows[:, None, a] - cols[None, :, a]) % N for a in range(d))
    return arr[idx]


@dataclass(frozen=True)
class ChaosReport:
    symbol: str
    orders: dict          # m -> m! |sym f^m|^2
    total: float
    kernels: dict         # m -> list of (coefficient, free paths)
    first_order: np.ndarray | None = None


def chaos_pairing(tau: Symbol | str, eps1: float, eps2: float | None, grid: Grid, x, lam: float,
                  kernel: KernelSpec | None = None, block: int = 512) -> ChaosReport:
    """Per-order Ito pairings of (W^eps1 - W^eps2) tested against phi^lambda_x."""
    d = grid.d
    kernel = kernel or green(d)
    cat = catalogue(d)
    if isinstance(tau, str):
        tau = cat[tau] if tau in cat else parse_symbol(tau, d)
    name = next((n for n, s in cat.items() if s is tau), None)
    k = None
    if name is None:
        # accept the tripod with any derivative decoration
        facs = tau.factors()
        if len(facs) == 2 and facs[1].kind == PLANTED:
            inner = facs[1].children[0].factors()
            if len(inner) == 2 and inner[0] is inner[1] and inner[0].kind == PLANTED and inner[0].children[0] is xi():
                k = inner[0].k
                name = "tripod"
        if name is None:
            raise OutsideCatalogue(f"{tau.text} is not in the chaos catalogue")
    elif name == "tripod":
        k = tau.factors()[1].children[0].factors()[0].k
    ops = _Ops(grid)
    phi = rescaled_test(grid, x, lam)
    eps = [e for e in (eps1, eps2) if e is not None]
    signs = [1.0, -1.0][: len(eps)]
    leaves = [_leaves(ops, e, kernel, k or (0,) * d) for e in eps]
    pairs = [(a, b, sa * sb) for a, sa in enumerate(signs) for b, sb in enumerate(signs)]
    Phi = ops.corr(phi, phi)
    orders: dict[int, float] = {}
    first = None
    if name == "noise":
        f1 = sum(s * ops.corr(phi, L.rho) for s, L in zip(signs, leaves))
        orders[1] = ops.dot(f1, f1)
        first = f1
    elif name == "cherry":
        # f^2(y1, y2) = h^d sum_a phi(a) rho(a - y1) (K rho)(a - y2)
        val = 0.0
        for a, b, s in pairs:
            A, B = leaves[a], leaves[b]
            same = ops.corr(A.rho, B.rho) * ops.corr(A.Krho, B.Krho)
            swap = ops.corr(A.rho, B.Krho) * ops.corr(A.Krho, B.rho)
            val += s * (ops.dot(Phi, same) + ops.dot(Phi, swap))
        orders[2] = val
        mass = float(phi.sum() * grid.cell)
        f0 = sum(s * mass * ops.dot(L.rho, L.Krho) for s, L in zip(signs, leaves))
        orders[0] = f0 * f0
    else:
        orders[3] = _tripod_third(ops, leaves, signs, phi, Phi, block)
        orders[2] = 0.0
        f1 = 0.0
        for s, L in zip(signs, leaves):
            J = ops.corr(L.G, L.rho)
            M = L.K * J
            k0 = float(L.K.sum() * grid.cell)
            g0 = ops.dot(L.G, L.G)
            w1 = 2 * ops.corr(L.G, M) + k0 * g0 * L.rho
            f1 = f1 + s * ops.corr(phi, w1)
        orders[1] = ops.dot(f1, f1)
        first = f1
    kernels = {m: [(t.coefficient, t.free) for t in terms] for m, terms in wick_terms(tau).items()}
    return ChaosReport(tau.text, orders, math.fsum(orders.values()), kernels, first)


def _tripod_third(ops: _Ops, leaves, signs, phi, Phi, block: int) -> float:
    """3! |sym f^3|^2 for f^3 = h^d sum_a phi(a) rho(a - y1) h^d sum_c K(a - c) G(c - y2) G(c - y3)."""
    grid = ops.grid
    N, d, cell = grid.N, grid.d, grid.cell
    support = np.argwhere(np.abs(phi) > 0)
    phis = phi[tuple(support.T)]
    allpts = np.argwhere(np.ones(grid.shape, dtype=bool))
    total = 0.0
    for a, sa in enumerate(signs):
        for b, sb in enumerate(signs):
            if b < a:
                continue
            A, B = leaves[a], leaves[b]
            mult = sa * sb * (1 if a == b else 2)
            R = ops.corr(A.rho, B.rho)
            Gam = ops.corr(A.G, B.G)
            T = Gam * Gam
            H = ops.corr(ops.conv(A.K, T), B.K)
            ident = ops.dot(Phi, R * H)
            # swap of the first two arguments, summed over (c, c') in row blocks
            E1 = ops.corr(A.rho, B.G)   # (a - c')
            E2 = ops.corr(A.G, B.rho)   # (c - b)
            Ka = _shift_matrix(A.K, support, allpts, N, d) * phis[:, None] * cell   # [a, c]
            E1m = _shift_matrix(E1, support, allpts, N, d)                      # [a, c']
            Kb = _shift_matrix(B.K, support, allpts, N, d) * phis[:, None] * cell   # [b, c']
            swap = 0.0
            for start in range(0, allpts.shape[0], block):
                rows = allpts[start:start + block]
                A1 = Ka[:, start:start + block].T @ E1m                       # [c, c']
                E2m = _shift_matrix(E2, rows, support, N, d)                   # [c, b]
                B1 = E2m @ Kb                                                  # [c, c']
                Gm = _shift_matrix(Gam, rows, allpts, N, d)
                swap += math.fsum((A1 * B1 * Gm).ravel())
            swap *= cell ** 2
            total += mult * (2 * ident + 4 * swap)
    return total


def monte_carlo_pairing(tau: Symbol | str, eps1: float, eps2: float | None, grid: Grid, x, lam: float,
                        mc: MCSpec, kernel: KernelSpec | None = None, first_order: np.ndarray | None = None):
    """Direct ensemble estimate of E[P^2] for the pairing P of the model difference.

    With ``first_order`` given, also returns the sample covariance between the
    first-chaos projection I_1(f^1) and the rest of P.
    """
    d = grid.d
    cat = catalogue(d)
    if isinstance(tau, str):
        tau = cat[tau] if tau in cat else parse_symbol(tau, d)
    phi = rescaled_test(grid, x, lam)
    vals, cross = [], []
    for j in mc.streams():
        noise = sample_white_noise(grid, mc.seed, j)
        P = interpret_naive(tau, noise.mollified(eps1), kernel=kernel).pair(phi)
        if eps2 is not None:
            P -= interpret_naive(tau, noise.mollified(eps2), kernel=kernel).pair(phi)
        vals.append(P)
        if first_order is not None:
            I1 = noise.xi.pair(first_order)
            cross.append((I1, P - I1))
    vals = np.array(vals)
    sq = vals * vals
    out = {"mean_square": float(sq.mean()), "stderr": float(sq.std(ddof=1) / math.sqrt(len(sq)))}
    if cross:
        c = np.array(cross)
        prod = (c[:, 0] - c[:, 0].mean()) * (c[:, 1] - c[:, 1].mean())
        out["cross_covariance"] = float(prod.mean())
        out["cross_stderr"] = float(prod.std(ddof=1) / math.sqrt(len(prod)))
    return out
