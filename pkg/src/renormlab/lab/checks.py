"""Numeric signatures of the model: scaling fits, the tadpole divergence,
spectral-gap and Malliavin checks, the derivative decomposition and the
pointed-norm archetype."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import stats

from ..kernels import Grid, GridField, KernelSpec, fft_workers, green, kernel_array, mollifier, \
    mollify, periodic_convolution, power, sample, sampled_symbol, symbol
from ..symbols import DegreeParams, Symbol, malliavin_D, statistics
from .interpret import Character, ToleranceExceeded, base_points, interpret_naive, recenter
from .noise import MCSpec, generator, profile_moment, rescaled_test, sample_white_noise


class DegenerateGrid(ValueError):
    pass


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    ci: tuple[float, float]
    scales: tuple
    values: tuple        # the fitted magnitudes, one per scale
    errors: tuple        # their standard errors (0 for deterministic data)

    def contains(self, target: float, slack: float = 0.0) -> bool:
        return self.ci[0] - slack <= target <= self.ci[1] + slack


def fit_power_law(scales: Sequence[float], values: Sequence[float], errors: Sequence[float] | None = None,
                  min_decades: float = 0.0, level: float = 0.95) -> FitResult:
    """Least-squares slope of log(value) against log(scale) with a confidence interval.

    With standard errors, points are weighted by 1/var(log value) and the
    slope error is inflated by the reduced chi-square when the scatter
    exceeds the reported errors.
    """
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.size < 2 or np.any(s <= 0) or np.any(v <= 0):
        raise DegenerateGrid("need at least two positive scales and positive values")
    if math.log10(s.max() / s.min()) < min_decades - 1e-12:
        raise DegenerateGrid(f"scales span {math.log10(s.max() / s.min()):.2f} decades, need {min_decades}")
    x, y = np.log(s), np.log(v)
    e = np.zeros_like(y) if errors is None else np.asarray(errors, dtype=float) / v
    n = len(x)
    if np.all(e > 0):
        w = 1 / e ** 2
    else:
        w = np.ones_like(x)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    dof = max(n - 2, 1)
    if np.all(e > 0):
        chi2 = float(np.sum(w * resid ** 2)) / dof
        se = math.sqrt(max(chi2, 1.0) / sxx)
    else:
        se = math.sqrt(float(np.sum(resid ** 2)) / dof / sxx) if n > 2 else 0.0
    q = stats.t.ppf(0.5 + level / 2, dof) if n > 2 else stats.norm.ppf(0.5 + level / 2)
    return FitResult(slope, intercept, se, (slope - q * se, slope + q * se), tuple(s), tuple(v),
                     tuple(np.asarray(errors if errors is not None else np.zeros(n), dtype=float)))


def _moment_root(samples, p: float) -> tuple[float, float]:
    """(E|X|^p)^(1/p) from per-sample p-th moments, with a delta-method error."""
    m = np.asarray(samples, dtype=float)
    mean = float(math.fsum(m) / m.size)
    if m.size < 2:
        return mean ** (1 / p), 0.0
    se = float(m.std(ddof=1) / math.sqrt(m.size))
    return mean ** (1 / p), mean ** (1 / p - 1) * se / p


def scaling_fit(lambdas: Sequence[float], moments: Sequence[Sequence[float]], p: float = 2.0,
                min_decades: float = 1.5) -> FitResult:
    """Slope of log (E|P_lambda|^p)^(1/p) against log lambda.

    ``moments[j]`` holds per-sample estimates of E|P|^p at ``lambdas[j]``; a
    single entry means deterministic data.
    """
    vals, errs = zip(*(_moment_root(m, p) for m in moments))
    return fit_power_law(lambdas, vals, errs, min_decades=min_decades)


def dyadic_scales(first: int = 1, last: int = 6) -> list[float]:
    return [2.0 ** -j for j in range(first, last + 1)]


def polynomial_pairings(k: Sequence[int], lambdas: Sequence[float]) -> list[list[float]]:
    """Squares of Pi_x X^k(phi^lambda_x) = lambda^|k| int z^k phi, one deterministic entry per scale."""
    m = profile_moment(tuple(k))
    if m == 0:
        raise DegenerateGrid(f"the test profile has vanishing moment {tuple(k)}")
    return [[(lam ** sum(k) * m) ** 2] for lam in lambdas]


class _Corr:
    def __init__(self, grid: Grid):
        self.grid = grid
        self.w = fft_workers()

    def hat(self, a):
        return sfft.fftn(a, workers=self.w)

    def corr_hat(self, fhat, g):
        """x -> h^d sum_w f(x + w) g(w), with f given in Fourier space."""
        return np.real(sfft.ifftn(fhat * np.conj(self.hat(g)), workers=self.w)) * self.grid.cell


def noise_pairings(grid: Grid, lambdas: Sequence[float], mc: MCSpec, eps: float | None = None) -> list[list[float]]:
    """Per-sample spatial means of |Pi_x Xi(phi^lambda_x)|^2 over all x."""
    ops = _Corr(grid)
    tests = [rescaled_test(grid, (0.0,) * grid.d, lam) for lam in lambdas]
    out = [[] for _ in lambdas]
    for j in mc.streams():
        field_ = sample_white_noise(grid, mc.seed, j).mollified(eps)
        fhat = ops.hat(field_.values)
        for slot, phi in zip(out, tests):
            P = ops.corr_hat(fhat, phi)
            slot.append(float(np.mean(P * P)))
    return out


def symbol_pairings(tau: Symbol, grid: Grid, lambdas: Sequence[float], mc: MCSpec, params: DegreeParams,
                    eps: float | None = None, character: Character | None = None, per_dim: int = 2,
                    kernel: KernelSpec | None = None) -> list[list[float]]:
    """Per-sample means over base points of |Pi_x tau(phi^lambda_x)|^2, optionally renormalized."""
    pts = base_points(grid, per_dim)
    out = [[] for _ in lambdas]
    for j in mc.streams():
        field_ = sample_white_noise(grid, mc.seed, j).mollified(eps)
        acc = [0.0] * len(lambdas)
        for x in pts:
            Pi = recenter(tau, x, field_, params, kernel=kernel, character=character)
            xc = tuple(i * grid.h for i in x)
            for a, lam in enumerate(lambdas):
                acc[a] += Pi.pair(rescaled_test(grid, xc, lam)) ** 2
        for slot, a in zip(out, acc):
            slot.append(a / len(pts))
    return out


# ---------------------------------------------------------------- divergence


@dataclass(frozen=True)
class DivergenceReport:
    beta: float
    eps: tuple
    tadpole: tuple            # h^d sum_u K(u) C^eps(u)
    renormalized: tuple       # <K * C^eps, phi>
    fit: FitResult            # log tadpole against log(1/eps)
    ratios: tuple             # |v(e_{j+1}) - v(e_{j+2})| / |v(e_j) - v(e_{j+1})|
    limit: float              # <K, phi>

    @property
    def cauchy(self) -> bool:
        return all(r < 0.8 for r in self.ratios)

    def rows(self) -> list[dict]:
        return [{"eps": e, "tadpole": t, "renormalized": v} for e, t, v in zip(self.eps, self.tadpole, self.renormalized)]


def divergence_demo(beta: float, eps_list: Sequence[float] = (0.2, 0.1, 0.05, 0.025), N: int = 256,
                    L: float = 1.0, x=(0.0, 0.0), lam: float = 0.25) -> DivergenceReport:
    """Tadpole of the power kernel |z|^-beta against the mollified covariance in d = 2."""
    if not 0 < beta < 2:
        raise ValueError(f"beta={beta} must lie in (0, 2)")
    grid = Grid(N, 2, L)
    ops = _Corr(grid)
    K = kernel_array(power(beta, 2), grid)
    Khat = ops.hat(K)
    phi = rescaled_test(grid, x, lam)
    t, v = [], []
    for e in eps_list:
        rho = sample(mollifier(e, 2), grid)
        C = ops.corr_hat(ops.hat(rho), rho)
        t.append(math.fsum((K * C).ravel()) * grid.cell)
        KC = np.real(sfft.ifftn(Khat * ops.hat(C), workers=ops.w)) * grid.cell
        v.append(math.fsum((KC * phi).ravel()) * grid.cell)
    fit = fit_power_law([1 / e for e in eps_list], t)
    diffs = [abs(a - b) for a, b in zip(v, v[1:])]
    ratios = tuple(b / a if a else math.inf for a, b in zip(diffs, diffs[1:]))
    limit = math.fsum((K * phi).ravel()) * grid.cell
    return DivergenceReport(beta, tuple(eps_list), tuple(t), tuple(v), fit, ratios, limit)


# ---------------------------------------------------------------- spectral gap


@dataclass(frozen=True)
class Cylinder:
    """F = f(xi(phi_1), ..., xi(phi_n)); ``f`` and ``grad`` act on arrays of shape (samples, n)."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]


def cylinder(name: str) -> Cylinder:
    if name == "linear":
        return Cylinder(name, lambda g: g[:, 0], lambda g: np.ones_like(g[:, :1]))
    if name == "square":
        return Cylinder(name, lambda g: g[:, 0] ** 2, lambda g: 2 * g[:, :1])
    if name == "cosine":
        return Cylinder(name, lambda g: np.cos(g[:, 0]), lambda g: -np.sin(g[:, :1]))
    raise KeyError(f"unknown cylinder functional {name!r}")


@dataclass(frozen=True)
class PoincareReport:
    name: str
    variance: float
    variance_stderr: float
    energy: float
    energy_stderr: float
    gram: np.ndarray = field(repr=False)

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.variance_stderr, self.energy_stderr)

    @property
    def holds(self) -> bool:
        return self.variance <= self.energy + 3 * self.combined_stderr


def _pairing_samples(grid: Grid, tests: Sequence[np.ndarray], mc: MCSpec) -> np.ndarray:
    T = np.stack([np.asarray(t, dtype=float).ravel() for t in tests], axis=1) * grid.cell
    out = np.empty((mc.samples, len(tests)))
    for j in mc.streams():
        xi = generator(mc.seed, j).standard_normal(grid.N ** grid.d) / math.sqrt(grid.cell)
        out[j] = xi @ T
    return out


def poincare_check(F: Cylinder | str, tests: Sequence[np.ndarray], grid: Grid, mc: MCSpec) -> PoincareReport:
    """Ensemble estimates of Var F and E|grad F|^2 with grad_h F = sum_i d_i f <h, phi_i>."""
    F = cylinder(F) if isinstance(F, str) else F
    g = _pairing_samples(grid, tests, mc)
    gram = np.array([[math.fsum((a * b).ravel()) * grid.cell for b in tests] for a in tests])
    vals = F.f(g)
    grads = F.grad(g)
    energy = np.einsum("si,ij,sj->s", grads, gram, grads)
    n = len(vals)
    dev2 = (vals - vals.mean()) ** 2
    var = float(math.fsum(dev2) / (n - 1))
    var_se = float(dev2.std(ddof=1) / math.sqrt(n))
    en = float(math.fsum(energy) / n)
    en_se = float(energy.std(ddof=1) / math.sqrt(n))
    report = PoincareReport(F.name, var, var_se, en, en_se, gram)
    if mc.tolerance is not None and report.combined_stderr > mc.tolerance:
        raise ToleranceExceeded(f"standard error {report.combined_stderr:.3g} exceeds {mc.tolerance}")
    return report


# ---------------------------------------------------------------- Malliavin


def polarization_nodes(n: int) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
    """Nodes t_j and weights w_j with p'(0) = sum w_j p(t_j) for every polynomial of degree <= n.

    Uses n nodes 1, ..., n-1, t with e_{n-1}(nodes) = 0, so that the
    interpolation error c * prod(t - t_j) has zero slope at 0.  For n = 2 this
    is the central difference; n <= 1 uses the central difference as well.
    """
    if n <= 1:
        nodes = [Fraction(1), Fraction(-1)]
    else:
        base = [Fraction(j) for j in range(1, n)]

        def e(m, xs):
            return sum((math.prod(c) for c in itertools.combinations(xs, m)), Fraction(0))

        nodes = base + [-e(n - 1, base) / e(n - 2, base)]
    weights = []
    for j, tj in enumerate(nodes):
        others = [t for i, t in enumerate(nodes) if i != j]
        denom = math.prod((tj - t for t in others), start=Fraction(1))
        # derivative at 0 of prod(t - t_i) over i != j
        slope = sum((math.prod((-t for b, t in enumerate(others) if b != a), start=Fraction(1))
                     for a in range(len(others))), Fraction(0))
        weights.append(slope / denom)
    return tuple(nodes), tuple(weights)


def malliavin_identity_check(tau: Symbol, h: GridField, eps: float | None, xi: GridField,
                             kernel: KernelSpec | None = None) -> float:
    """Sup-norm gap between the polarized derivative of xi -> Pi(tau) in direction h and Pi(D tau)."""
    st = statistics(tau)
    if st.n_xidot:
        raise ValueError(f"{tau.text} already contains XiD")
    xi_e = mollify(xi, eps) if eps else xi
    h_e = mollify(h, eps) if eps else h
    nodes, weights = polarization_nodes(st.n_xi)
    deriv = np.zeros(xi.values.shape)
    for t, w in zip(nodes, weights):
        if w:
            deriv += float(w) * interpret_naive(tau, xi_e.like(xi_e.values + float(t) * h_e.values), kernel=kernel).values
    formal = np.zeros(xi.values.shape)
    for s, c in malliavin_D(tau).items():
        formal += c * interpret_naive(s, xi_e, h_eps=h_e, kernel=kernel).values
    return float(np.max(np.abs(deriv - formal))) if deriv.size else 0.0


def random_direction(grid: Grid, seed: int, smooth: float = 0.1) -> GridField:
    """Smooth random field with unit L^2 norm."""
    f = mollify(sample_white_noise(grid, seed, 2 ** 31).xi, smooth)
    return f.like(f.values / math.sqrt(f.pair(f.values)))


# ---------------------------------------------------------------- derivative decomposition


@dataclass(frozen=True)
class DecompositionReport:
    a_increment: FitResult        # L^2_x increments of K * xi^eps against |y|
    b_naive_increment: FitResult  # L^2_x increments of K * h^eps against |y|
    b_taylor_increment: FitResult # L^2_x first-order Taylor remainder of K * h^eps against |y|
    b_plus: FitResult             # L^2 of B+_x(phi^lambda_x) against lambda
    c_term: FitResult             # L^6 of sum_i C_{x,i}(phi^lambda_x) against lambda


def derivative_decomposition_demo(h: GridField, eps: float | None, mc: MCSpec,
                                  offsets: Sequence[int] = (2, 4, 8),
                                  smooth_offsets: Sequence[int] = (1, 2, 4),
                                  lambdas: Sequence[float] = (0.5, 0.25, 0.125),
                                  kernel: KernelSpec | None = None) -> DecompositionReport:
    """Scaling of the pieces of the derivative of the cherry in direction h.

    Increments are taken along the first axis.  The default noise offsets
    skip |y| = h, where lattice dispersion steepens the increments.
    """
    grid = Grid.of(h)
    norm = math.sqrt(h.pair(h.values))
    if abs(norm - 1) > 1e-9:
        raise ValueError(f"direction has L^2 norm {norm}, expected 1")
    d = grid.d
    K = kernel or green(d)
    ops = _Corr(grid)
    h_e = mollify(h, eps) if eps else h
    Kh = periodic_convolution(h_e, K).values
    dKh = [periodic_convolution(h_e, K, tuple(int(i == a) for i in range(d))).values for a in range(d)]
    ys = [o * grid.h for o in offsets]
    ys_smooth = [o * grid.h for o in smooth_offsets]

    def increments(f, taylor=None, offsets=offsets):
        out = []
        for o in offsets:
            diff = np.roll(f, -o, axis=0) - f
            if taylor is not None:
                diff = diff - o * grid.h * taylor
            out.append([float(np.mean(diff * diff))])
        return out

    # K * h is smooth, so its increments need no offset from the lattice scale
    b_naive = fit_power_law(ys_smooth, [v[0] ** 0.5 for v in increments(Kh, offsets=smooth_offsets)])
    b_taylor = fit_power_law(ys_smooth, [v[0] ** 0.5 for v in increments(Kh, dKh[0], smooth_offsets)])

    disp = grid.displacement((0.0,) * d)
    tests = [rescaled_test(grid, (0.0,) * d, lam) for lam in lambdas]
    a_mom = [[] for _ in offsets]
    bp_mom = [[] for _ in lambdas]
    c_mom = [[] for _ in lambdas]
    for j in mc.streams():
        xi_e = sample_white_noise(grid, mc.seed, j).mollified(eps)
        Kxi = periodic_convolution(xi_e, K).values
        for slot, v in zip(a_mom, increments(Kxi)):
            slot.extend(v)
        xhat = ops.hat(xi_e.values)
        khat = ops.hat(Kh * xi_e.values)
        for a, phi in enumerate(tests):
            P = ops.corr_hat(xhat, phi)
            C = sum(dKh[i] * ops.corr_hat(xhat, disp[i] * phi) for i in range(d))
            Bplus = ops.corr_hat(khat, phi) - Kh * P - C
            bp_mom[a].append(float(np.mean(Bplus ** 2)))
            c_mom[a].append(float(np.mean(C ** 6)))
    a_fit = fit_power_law(ys, *zip(*(_moment_root(m, 2) for m in a_mom)))
    return DecompositionReport(a_fit, b_naive, b_taylor, scaling_fit(lambdas, bp_mom, 2, min_decades=0),
                               scaling_fit(lambdas, c_mom, 6, min_decades=0))


def increment_expectation(grid: Grid, offsets: Sequence[int], eps: float | None = None,
                          kernel: KernelSpec | None = None) -> list[float]:
    """Exact E|K * xi^eps(x + y) - K * xi^eps(x)|^2 on the grid, y = offset * h along the first axis."""
    K = kernel or green(grid.d)
    mult = np.abs(symbol(K, grid)) ** 2
    if eps:
        mult = mult * np.abs(sampled_symbol(mollifier(eps, grid.d), grid)) ** 2
    f0 = grid.frequencies()[0]
    # white noise has spectral density 1 per mode of the unit-volume torus, scaled by L^-d
    return [float(np.sum(np.abs(1 - np.exp(1j * f0 * o * grid.h)) ** 2 * mult)) / grid.L ** grid.d
            for o in offsets]


# ---------------------------------------------------------------- pointed norms


Jet = Callable[[np.ndarray, tuple], np.ndarray]   # (points (M, d), k) -> d^k f at the points


def polynomial_jet(coeffs: Mapping[tuple, object]) -> Jet:
    """Derivatives of sum_m c_m y^m; exact when the points hold Fractions."""
    coeffs = {tuple(m): c for m, c in coeffs.items()}

    def jet(pts, k):
        out = np.zeros(len(pts), dtype=object if pts.dtype == object else float)
        for m, c in coeffs.items():
            if any(a < b for a, b in zip(m, k)):
                continue
            fac = math.prod(math.perm(a, b) for a, b in zip(m, k))
            term = np.full(len(pts), c * fac, dtype=out.dtype)
            for i, (a, b) in enumerate(zip(m, k)):
                for _ in range(a - b):
                    term = term * pts[:, i]
            out = out + term
        return out

    return jet


def sine_jet(freq: float = 1.0, phase: Sequence[float] | None = None) -> Jet:
    """Derivatives of prod_i sin(freq y_i + phase_i)."""

    def jet(pts, k):
        pts = np.asarray(pts, dtype=float)
        ph = np.zeros(pts.shape[1]) if phase is None else np.asarray(phase, dtype=float)
        out = np.ones(len(pts))
        for i, m in enumerate(k):
            out = out * freq ** m * np.sin(freq * pts[:, i] + ph[i] + m * math.pi / 2)
        return out

    return jet


def _indices(d: int, below: int) -> list[tuple]:
    return [k for n in range(max(below, 0)) for k in _exact_total(d, n)]


def _exact_total(d: int, n: int):
    for combo in itertools.combinations_with_replacement(range(d), n):
        k = [0] * d
        for i in combo:
            k[i] += 1
        yield tuple(k)


def _factorial(k) -> int:
    return math.prod(math.factorial(a) for a in k)


def _power(z, m):
    out = 1
    for i, a in enumerate(m):
        for _ in range(a):
            out = out * z[:, i]
    return out


@dataclass(frozen=True)
class PointedNormReport:
    gamma: int
    nu: int
    p: float
    lambdas: tuple
    local_sup: tuple       # max_k lambda^-(nu-|k|) sup_B |F_k|
    local_p: tuple         # same with the discrete L^p norm over B
    ball_volume: tuple
    improvement: FitResult | None   # max_k sup_B |F_k| lambda^-(gamma-|k|) against lambda
    global_constant: float  # max_k sup |F_k(z) - (Gamma_zy F(y))_k| / |z - y|^(gamma-|k|)

    @property
    def vanishes(self) -> bool:
        return all(v == 0 for v in self.local_sup) and self.global_constant == 0


def _ball(x, lam, resolution: int, exact: bool):
    d = len(x)
    js = [j for j in itertools.product(range(-resolution, resolution + 1), repeat=d)
          if sum(a * a for a in j) <= resolution * resolution]
    if exact:
        step = Fraction(lam) / resolution
        pts = np.array([[Fraction(xi) + step * a for xi, a in zip(x, j)] for j in js], dtype=object)
        cell = float(step) ** d
    else:
        step = lam / resolution
        pts = np.asarray(x, dtype=float) + step * np.array(js, dtype=float)
        cell = step ** d
    return pts, cell


def _components(jet: Jet, x, pts, gamma: int, nu: int, exact: bool):
    """F_k at the points for |k| < gamma."""
    d = len(x)
    xa = np.array([list(map(Fraction, x)) if exact else list(map(float, x))], dtype=object if exact else float)
    z = pts - xa
    comps = {}
    for k in _indices(d, gamma):
        val = jet(pts, k)
        for l in _indices(d, nu - sum(k)):
            kl = tuple(a + b for a, b in zip(k, l))
            c = jet(xa, kl)[0]
            val = val - c * _power(z, l) / _factorial(l)
        comps[k] = val
    return comps


def pointed_norm_archetype(jet: Jet, x, gamma: int, nu: int, p: float = 2.0,
                           lambdas: Sequence[float] | None = None, resolution: int = 12,
                           global_resolution: int = 6, exact: bool = False) -> PointedNormReport:
    """Norms of F_x(y) = sum_{|k|<gamma} (d^k f(y) - Taylor_{nu-|k|} d^k f at x) X^k / k!."""
    if gamma >= nu:
        raise ValueError(f"gamma={gamma} must be smaller than nu={nu}")
    lambdas = list(lambdas) if lambdas is not None else dyadic_scales(1, 6)
    local_sup, local_p, vols, improve = [], [], [], []
    for lam in lambdas:
        pts, cell = _ball(x, lam, resolution, exact)
        comps = _components(jet, x, pts, gamma, nu, exact)
        sup_w = lp_w = imp = 0.0
        for k, vals in comps.items():
            a = np.abs(np.asarray(vals, dtype=float))
            sup = float(a.max())
            lp = float((cell * np.sum(a ** p)) ** (1 / p)) if math.isfinite(p) else sup
            sup_w = max(sup_w, sup / lam ** (nu - sum(k)))
            lp_w = max(lp_w, lp / lam ** (nu - sum(k)))
            imp = max(imp, sup / lam ** (gamma - sum(k)))
        local_sup.append(sup_w)
        local_p.append(lp_w)
        vols.append(cell * len(pts))
        improve.append(imp)
    fit = fit_power_law(lambdas, improve) if all(v > 0 for v in improve) else None
    # global bound over pairs in the largest ball
    pts, _ = _ball(x, max(lambdas), global_resolution, exact)
    comps = _components(jet, x, pts, gamma, nu, exact)
    P = np.asarray(pts, dtype=float)
    dist = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1))
    off = dist > 0
    worst = 0.0
    n = len(pts)
    for k in comps:
        # (Gamma_zy F(y))_k = sum_{m >= k, |m| < gamma} F_m(y) (z - y)^(m - k) / (m - k)!
        re = np.zeros((n, n), dtype=object if exact else float)
        for m, Fm in comps.items():
            if any(a < b for a, b in zip(m, k)):
                continue
            mk = tuple(a - b for a, b in zip(m, k))
            term = np.ones((n, n), dtype=re.dtype)
            for i, a in enumerate(mk):
                for _ in range(a):
                    term = term * (pts[:, None, i] - pts[None, :, i])
            re = re + term * Fm[None, :] / _factorial(mk)
        gap = np.abs(np.asarray(comps[k][:, None] - re, dtype=float))
        ratio = gap[off] / dist[off] ** (gamma - sum(k))
        worst = max(worst, float(ratio.max()) if ratio.size else 0.0)
    return PointedNormReport(gamma, nu, p, tuple(lambdas), tuple(local_sup), tuple(local_p), tuple(vols), fit, worst)
