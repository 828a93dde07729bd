"""Numeric kernels on R^d and on the periodic grid.

Real-space kernels come from the heat-time representation

    K(z) = int_0^inf (4 pi t)^(-d/2) exp(-|z|^2 / (2t) - t) dt,

and a dyadic slice keeps the time window [2^(-2i), 2^(-2(i-1))].  On the
torus, convolutions run through the discrete Fourier transform, either with
an exact spectral symbol or with the transform of a sampled kernel.
"""

from __future__ import annotations

import math
import os
import struct
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import integrate


class KernelError(ValueError):
    pass


def fft_workers() -> int:
    """Thread cap for grid transforms, from RENORM_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("RENORM_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- grid fields


_MAGIC = b"RLGF"


@dataclass
class GridField:
    """Real values on the periodic grid of side ``N`` and period ``L`` in each of ``d`` directions."""

    values: np.ndarray
    L: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 1 or len(set(v.shape)) != 1:
            raise KernelError(f"grid must be square, got shape {v.shape}")
        n = v.shape[0]
        if n < 8 or n & (n - 1):
            raise KernelError(f"grid side must be a power of two >= 8, got {n}")
        if not np.all(np.isfinite(v)):
            raise KernelError("grid values must be finite")
        if self.L <= 0:
            raise KernelError("period must be positive")
        self.values = v

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell(self) -> float:
        return self.h ** self.d

    def like(self, values) -> "GridField":
        return GridField(values, self.L)

    def same_grid(self, other: "GridField") -> bool:
        return self.values.shape == other.values.shape and self.L == other.L

    def integral(self) -> float:
        return float(math.fsum(self.values.ravel()) * self.cell)

    def pair(self, test: "GridField | np.ndarray") -> float:
        t = test.values if isinstance(test, GridField) else np.asarray(test)
        return float(math.fsum((self.values * t).ravel()) * self.cell)

    def __add__(self, other):
        return self.like(self.values + _vals(other))

    def __sub__(self, other):
        return self.like(self.values - _vals(other))

    def __mul__(self, other):
        return self.like(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    # binary format: magic, endianness tag, d, N, L, row-major doubles
    def to_bytes(self, byteorder: str = "<") -> bytes:
        if byteorder not in "<>":
            raise KernelError("byteorder must be '<' or '>'")
        head = _MAGIC + byteorder.encode() + struct.pack(byteorder + "IId", self.d, self.N, self.L)
        return head + np.ascontiguousarray(self.values, dtype=byteorder + "f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridField":
        if blob[:4] != _MAGIC:
            raise KernelError("not a grid field file")
        order = blob[4:5].decode()
        if order not in "<>":
            raise KernelError(f"bad endianness tag {order!r}")
        d, n, L = struct.unpack(order + "IId", blob[5:21])
        data = np.frombuffer(blob[21:], dtype=order + "f8")
        if data.size != n ** d:
            raise KernelError(f"payload holds {data.size} values, header says {n}^{d}")
        return cls(data.reshape((n,) * d).astype(float), L)

    def save(self, path, byteorder: str = "<") -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(byteorder))

    @classmethod
    def load(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _vals(x):
    return x.values if isinstance(x, GridField) else x


@dataclass(frozen=True)
class Grid:
    N: int
    d: int
    L: float = 1.0

    def __post_init__(self):
        if self.N < 8 or self.N & (self.N - 1):
            raise KernelError(f"grid side must be a power of two >= 8, got {self.N}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell(self) -> float:
        return self.h ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def coordinates(self) -> list[np.ndarray]:
        x = np.arange(self.N) * self.h
        return np.meshgrid(*([x] * self.d), indexing="ij")

    def displacement(self, origin: Sequence[float] | None = None) -> list[np.ndarray]:
        """Minimal-image displacement y - origin for every grid point y."""
        origin = origin if origin is not None else (0.0,) * self.d
        out = []
        for c, o in zip(self.coordinates(), origin):
            u = c - o
            out.append(u - self.L * np.round(u / self.L))
        return out

    def radius(self, origin=None) -> np.ndarray:
        return np.sqrt(sum(u * u for u in self.displacement(origin)))

    def frequencies(self) -> list[np.ndarray]:
        f = 2 * np.pi * sfft.fftfreq(self.N, d=self.h)
        return np.meshgrid(*([f] * self.d), indexing="ij")

    def field(self, values) -> GridField:
        return GridField(np.broadcast_to(values, self.shape).copy(), self.L)

    @classmethod
    def of(cls, f: GridField) -> "Grid":
        return cls(f.N, f.d, f.L)


# ---------------------------------------------------------------- heat-time kernels


def _heat_density(t, r2, d):
    return (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (2 * t) - t)


def _norm(z) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return float(np.sqrt(np.sum(z * z)))


def _log_time_density(s: float, r2: float, d: int) -> float:
    """t times the heat density at t = e^s, evaluated in log form."""
    expo = s - 0.5 * d * (math.log(4 * math.pi) + s) - 0.5 * r2 * math.exp(-min(s, 700.0)) - math.exp(min(s, 700.0))
    return math.exp(expo) if expo > -745 else 0.0


def green_kernel(z, d: int, rtol: float = 1e-10) -> float:
    """Green function of (Delta - 1) from the heat-time integral; ``z`` is a point or a radius."""
    r = _norm(z)
    if r == 0:
        raise KernelError("the Green function is singular at z = 0")
    r2 = r * r
    # integrate in s = log t on a window around the peak of r^2/(2t) + t
    peak = math.log(r / math.sqrt(2))
    lo_end, hi_end = min(peak, 0.0) - 60.0, max(peak, 0.0) + 7.0
    parts = [lo_end, peak, hi_end] if peak < hi_end else [lo_end, hi_end]
    total = 0.0
    for a, b in zip(parts, parts[1:]):
        val, _ = integrate.quad(_log_time_density, a, b, args=(r2, d), epsabs=0, epsrel=rtol, limit=400)
        total += val
    return total


def slice_window(i: int) -> tuple[float, float]:
    return 2.0 ** (-2 * i), 2.0 ** (-2 * (i - 1))


def scale_slice(z, i: int, d: int, rtol: float = 1e-10) -> float:
    """Scale-``i`` slice of the Green function (finite at z = 0)."""
    r2 = _norm(z) ** 2
    a, b = slice_window(i)
    # log-time keeps the window well conditioned for large i; the absolute floor only
    # matters once the slice underflows toward subnormals
    val, _ = integrate.quad(_log_time_density, math.log(a), math.log(b), args=(r2, d),
                            epsabs=1e-300, epsrel=rtol, limit=200)
    return val


def slice_ratio(r: float, i: int, d: int, c: float = None, C: float = None, rtol: float = 1e-10) -> float:
    """K^i(z) divided by its envelope, with the Gaussian factor folded into the
    integrand so that neither side underflows at large scales."""
    c = SLICE_DECAY if c is None else c
    C = SLICE_CONSTANT if C is None else C
    r2 = float(r) ** 2
    a, b = slice_window(i)
    shift = c * 4.0 ** i * r2

    def f(s):
        t = math.exp(s)
        return t * (4 * math.pi * t) ** (-d / 2) * math.exp(shift - r2 / (2 * t) - t)

    with warnings.catch_warnings():
        # the shifted exponent cancels to ~1e-11 relative at large i and |z|; quad then
        # reports roundoff but the value agrees with 30-digit quadrature
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, math.log(a), math.log(b), epsabs=0, epsrel=rtol, limit=200)
    return val / (C * 2.0 ** ((d - 2) * i))


SLICE_DECAY = 1 / 8
# Fitted once at d = 2: max of K^i / (2^((d-2)i) exp(-|z|^2 4^i / 8)) over i in [-2, 8],
# |z| in [0, 3] is 0.1103 (attained at z = 0); frozen with a 25% margin.
SLICE_CONSTANT = 0.138


def slice_envelope(r: float, i: int, d: int, c: float = SLICE_DECAY, C: float = SLICE_CONSTANT) -> float:
    return C * 2.0 ** ((d - 2) * i) * math.exp(-c * 4.0 ** i * r * r)


def fit_slice_constant(d: int = 2, scales=range(-2, 9), radii=None, c: float = SLICE_DECAY) -> float:
    """Largest slice/envelope ratio on a grid, with the envelope constant set to 1."""
    radii = np.linspace(0, 3, 61) if radii is None else radii
    return max(slice_ratio(r, i, d, c, 1.0) for i in scales for r in radii)


def slice_table(d: int, scales=range(-2, 9), radii=None, c: float = SLICE_DECAY,
                C: float = SLICE_CONSTANT) -> list[dict]:
    """Rows (i, |z|, K_i, envelope, ratio) for the slice bound."""
    radii = np.linspace(0, 3, 31) if radii is None else radii
    rows = []
    for i in scales:
        for r in radii:
            k = scale_slice(r, i, d)
            env = slice_envelope(float(r), i, d, c, C)
            rows.append({"i": i, "r": float(r), "K_i": k, "envelope": env,
                         "ratio": slice_ratio(r, i, d, c, C)})
    return rows


# ---------------------------------------------------------------- kernel specs


@dataclass(frozen=True)
class KernelSpec:
    """A translation-invariant kernel.

    ``kind`` is one of green, power, gaussian, slice, bump, mollified, truncated.
    ``derivative`` is applied spectrally when the kernel is convolved.
    """

    kind: str
    d: int
    beta: float | None = None
    scale: float | None = None
    index: int | None = None
    inner: "KernelSpec | None" = None
    eps: float | None = None
    radius: float | None = None
    derivative: tuple[int, ...] = ()

    def __post_init__(self):
        if self.derivative and len(self.derivative) != self.d:
            raise KernelError("derivative multiindex has the wrong length")
        if self.kind == "power" and not (0 < self.beta < self.d):
            raise KernelError(f"power kernels need 0 < beta < d, got {self.beta}")
        if self.kind == "slice" and not (-64 <= self.index <= 64):
            raise KernelError(f"slice index {self.index} outside the supported window")

    def differentiated(self, k) -> "KernelSpec":
        base = self.derivative or (0,) * self.d
        return replace(self, derivative=tuple(a + b for a, b in zip(base, k)))

    @property
    def has_symbol(self) -> bool:
        if self.kind in ("green", "gaussian"):
            return True
        if self.kind == "mollified":
            return self.inner.has_symbol
        return False

    def __call__(self, r):
        """Real-space radial profile (derivative-free kernels only)."""
        if any(self.derivative):
            raise KernelError("real-space evaluation of derivatives is not supported")
        return radial_value(self, r)


def green(d: int) -> KernelSpec:
    return KernelSpec("green", d)


def power(beta: float, d: int) -> KernelSpec:
    return KernelSpec("power", d, beta=beta)


def gaussian(scale: float, d: int) -> KernelSpec:
    return KernelSpec("gaussian", d, scale=scale)


def slice_kernel(i: int, d: int) -> KernelSpec:
    return KernelSpec("slice", d, index=i)


def truncate(K: KernelSpec, radius: float) -> KernelSpec:
    if radius <= 0:
        raise KernelError("truncation radius must be positive")
    return KernelSpec("truncated", K.d, inner=K, radius=radius, derivative=K.derivative)


def mollifier(eps: float, d: int) -> KernelSpec:
    if not (0 < eps <= 1):
        raise KernelError(f"mollifier scale must lie in (0, 1], got {eps}")
    return KernelSpec("bump", d, eps=eps)


def mollified(inner: KernelSpec, eps: float) -> KernelSpec:
    return KernelSpec("mollified", inner.d, inner=inner, eps=eps)


def smooth_cutoff(s):
    """Equal to 1 on [0, 1/2], 0 on [1, inf), C-infinity in between."""
    s = np.asarray(s, dtype=float)

    def psi(x):
        return np.where(x > 0, np.exp(-1 / np.where(x > 0, x, 1)), 0.0)

    u = 2 * (1 - s)  # 1 at s = 1/2, 0 at s = 1
    a, b = psi(u), psi(1 - u)
    return np.where(s <= 0.5, 1.0, np.where(s >= 1, 0.0, a / (a + b)))


def bump_profile(r):
    """Unnormalized even bump exp(-1/(1-r^2)) on the unit ball."""
    r = np.asarray(r, dtype=float)
    inside = r < 1
    safe = np.where(inside, 1 - r * r, 1.0)
    return np.where(inside, np.exp(-1 / safe), 0.0)


@lru_cache(maxsize=None)
def bump_mass(d: int) -> float:
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    val, _ = integrate.quad(lambda r: float(bump_profile(r)) * r ** (d - 1), 0, 1, epsabs=0, epsrel=1e-13)
    return area * val


def radial_value(K: KernelSpec, r):
    """Real-space value at radius ``r`` (array or scalar)."""
    r = np.asarray(r, dtype=float)
    kind = K.kind
    if kind == "green":
        return _radial_map(r, lambda x: green_kernel(x, K.d))
    if kind == "slice":
        return _radial_map(r, lambda x: scale_slice(x, K.index, K.d), allow_zero=True)
    if kind == "power":
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.abs(r) ** (-K.beta), np.inf)
    if kind == "gaussian":
        s = K.scale
        return np.exp(-r * r / (2 * s * s)) / (2 * np.pi * s * s) ** (K.d / 2)
    if kind == "bump":
        return bump_profile(r / K.eps) / (bump_mass(K.d) * K.eps ** K.d)
    if kind == "truncated":
        cut = smooth_cutoff(r / K.radius)
        inner = np.zeros_like(r)
        live = cut > 0
        inner[live] = radial_value(K.inner, r[live]) if r.ndim else radial_value(K.inner, r)
        return np.where(live, inner * cut, 0.0)
    raise KernelError(f"no real-space profile for kind {kind!r}")


def _radial_map(r, fn, allow_zero=False):
    flat = np.atleast_1d(r).ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.array([fn(x) if (x > 0 or allow_zero) else np.inf for x in uniq])
    out = vals[inv].reshape(np.shape(r))
    return out if np.ndim(r) else float(out)


def symbol(K: KernelSpec, grid: Grid) -> np.ndarray:
    """Discrete Fourier multiplier of convolution with K (derivative included)."""
    freqs = grid.frequencies()
    if K.kind == "green":
        base = 1 / (1 + sum(f * f for f in freqs))
    elif K.kind == "gaussian":
        base = np.exp(-0.5 * K.scale ** 2 * sum(f * f for f in freqs))
    elif K.kind == "mollified":
        base = symbol(replace(K.inner, derivative=()), grid) * sampled_symbol(mollifier(K.eps, K.d), grid)
    else:
        base = sampled_symbol(replace(K, derivative=()), grid)
    return base * derivative_symbol(K.derivative, grid)


def derivative_symbol(k, grid: Grid) -> np.ndarray | float:
    if not k or not any(k):
        return 1.0
    out = np.ones(grid.shape, dtype=complex)
    for f, m in zip(grid.frequencies(), k):
        if m:
            w = 1j * f
            if m % 2:
                # the Nyquist mode has no real odd derivative
                w = np.where(np.isclose(np.abs(f), np.pi / grid.h), 0, w)
            out = out * w ** m
    return out


def sample(K: KernelSpec, grid: Grid, origin: str = "cell_average") -> np.ndarray:
    """Kernel sampled at minimal-image displacements from the origin.

    Singular kernels get the average over a ball of one cell volume at z = 0.
    A bump kernel is renormalized so its grid integral is exactly one.
    """
    if K.kind == "bump":
        if K.eps > grid.L / 2:
            raise KernelError(f"mollifier scale {K.eps} exceeds the torus half-width")
        vals = radial_value(K, grid.radius())
        return vals / (vals.sum() * grid.cell)
    r = grid.radius()
    vals = np.array(radial_value(K, r), dtype=float)
    zero = (0,) * grid.d
    if not np.isfinite(vals[zero]):
        if origin != "cell_average":
            vals[zero] = 0.0
        else:
            vals[zero] = cell_average(K, grid)
    return vals


def cell_average(K: KernelSpec, grid: Grid) -> float:
    d = grid.d
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    rc = (grid.cell * d / area) ** (1 / d)
    if K.kind == "power":
        return area * rc ** (d - K.beta) / (d - K.beta) / grid.cell
    val, _ = integrate.quad(lambda r: float(radial_value(K, r)) * r ** (d - 1), 0, rc, limit=200)
    return area * val / grid.cell


def sampled_symbol(K: KernelSpec, grid: Grid) -> np.ndarray:
    return sfft.fftn(sample(K, grid), workers=fft_workers()) * grid.cell


def kernel_array(K: KernelSpec, grid: Grid) -> np.ndarray:
    """Real-space grid kernel k with (k * f)(x) = h^d sum_y k(x - y) f(y) matching ``periodic_convolution``."""
    return np.real(sfft.ifftn(symbol(K, grid), workers=fft_workers())) / grid.cell


def periodic_convolution(f: GridField, K: KernelSpec | np.ndarray, k: Sequence[int] = ()) -> GridField:
    """d^k K * f on the torus.  ``K`` is a spec or a precomputed multiplier on f's grid."""
    grid = Grid.of(f)
    if isinstance(K, KernelSpec):
        if K.d != f.d:
            raise KernelError(f"kernel dimension {K.d} does not match the grid dimension {f.d}")
        mult = symbol(K.differentiated(k) if k else K, grid)
    else:
        mult = np.asarray(K)
        if mult.shape != f.values.shape:
            raise KernelError(f"multiplier shape {mult.shape} does not match the grid {f.values.shape}")
        mult = mult * derivative_symbol(tuple(k), grid)
    w = fft_workers()
    out = sfft.ifftn(sfft.fftn(f.values, workers=w) * mult, workers=w)
    return f.like(np.real(out))


def mollify(f: GridField, eps: float) -> GridField:
    return periodic_convolution(f, sampled_symbol(mollifier(eps, f.d), Grid.of(f)))


# ---------------------------------------------------------------- finite part


class QuadratureError(RuntimeError):
    pass


def _sphere_rule(d: int, n: int = 64):
    """Nodes and weights on the unit sphere S^{d-1}."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n, 2 * np.pi / n)
    if d == 3:
        x, w = np.polynomial.legendre.leggauss(n // 2)
        ph = 2 * np.pi * np.arange(n) / n
        s = np.sqrt(1 - x * x)
        nodes = np.array([[si * math.cos(p), si * math.sin(p), xi] for xi, si in zip(x, s) for p in ph])
        weights = np.array([wi * 2 * np.pi / n for wi in w for _ in ph])
        return nodes, weights
    raise KernelError("finite-part quadrature supports d <= 3")


def _multiindices(d: int, below: int):
    import itertools
    for total in range(below):
        for combo in itertools.combinations_with_replacement(range(d), total):
            k = [0] * d
            for i in combo:
                k[i] += 1
            yield tuple(k)


def hadamard_finite_part(f: Callable, beta: float, d: int, R: float,
                         jet: Callable[[tuple], float] | Mapping | None = None,
                         order: int | None = None, rtol: float = 1e-12) -> float:
    """Finite part of int_{|y|<=R} |y|^-beta f(y) dy.

    ``f`` maps an (n, d) array of points to n values.  The Taylor polynomial of
    ``f`` at 0 up to total order below ``order`` (default [beta - d + 1]) is
    subtracted; ``jet(k)`` supplies the derivative d^k f(0) for |k| >= 1.
    """
    n_sub = math.floor(beta - d + 1) if order is None else order
    n_sub = max(n_sub, 0)
    if d - beta + n_sub <= 0:
        raise QuadratureError(f"Taylor order {n_sub} is too small for beta={beta} in d={d}")
    nodes, weights = _sphere_rule(d)
    origin = np.zeros((1, d))
    terms = []
    for k in _multiindices(d, n_sub):
        if not any(k):
            c = float(np.asarray(f(origin)).ravel()[0])
        elif jet is None:
            raise QuadratureError("derivatives of f at 0 are needed; pass jet")
        else:
            c = jet[k] if isinstance(jet, Mapping) else jet(k)
        terms.append((k, c / math.prod(math.factorial(m) for m in k)))

    # angular averages of monomials are even in r, so the remainder starts at an even order
    lead = n_sub + (n_sub % 2)

    def remainder(r):
        y = r * nodes
        vals = np.asarray(f(y), dtype=float)
        for k, c in terms:
            vals = vals - c * np.prod(y ** np.array(k), axis=1)
        return float(np.dot(weights, vals))

    floor = R * 1e-4  # Clenshaw-Curtis touches r = 0; use the nearby smooth value there

    def smooth_part(r):
        if lead == 0:
            return remainder(r)
        r = max(r, floor)
        return remainder(r) / r ** lead

    alpha = d - 1 - beta + lead
    if alpha <= -1:
        raise QuadratureError(f"radial integrand r^{alpha} is not integrable")
    val, err = integrate.quad(smooth_part, 0, R, weight="alg", wvar=(alpha, 0), epsabs=0, epsrel=rtol, limit=400)
    if not math.isfinite(val) or abs(err) > 1e-6 * max(1.0, abs(val)):
        raise QuadratureError(f"radial quadrature did not converge (estimate {val}, error {err})")
    return val
