"""White noise on the periodic grid and the fixed test-function profile."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from ..kernels import Grid, GridField, KernelError, bump_profile, mollify


@dataclass(frozen=True)
class MCSpec:
    """Ensemble settings; sample ``j`` uses the counter-based stream (seed, j)."""

    samples: int = 100
    seed: int = 0
    tolerance: float | None = None

    def streams(self):
        return range(self.samples)


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


@dataclass
class NoiseSample:
    """One white-noise realization: site variance 1/h^d, mollified copies cached by scale."""

    grid: Grid
    seed: int
    stream: int
    xi: GridField
    _mollified: dict = field(default_factory=dict, repr=False)

    def mollified(self, eps: float | None) -> GridField:
        if not eps:
            return self.xi
        hit = self._mollified.get(eps)
        if hit is None:
            hit = self._mollified[eps] = mollify(self.xi, eps)
        return hit

    def pair(self, test: np.ndarray) -> float:
        """xi(phi) = h^d sum_i xi_i phi(x_i)."""
        return self.xi.pair(test)


def sample_white_noise(grid: Grid, seed: int, stream: int = 0) -> NoiseSample:
    rng = generator(seed, stream)
    vals = rng.standard_normal(grid.shape) / math.sqrt(grid.cell)
    return NoiseSample(grid, seed, stream, GridField(vals, grid.L))


# ---------------------------------------------------------------- test function


def _profile_poly(z):
    # degree-4 truncation of exp(z_1 + ... + z_d): every moment of order <= 4 is positive
    s = sum(z)
    return 1 + s + s * s / 2 + s ** 3 / 6 + s ** 4 / 24


@lru_cache(maxsize=None)
def _profile_mass(d: int) -> float:
    # sphere averages: odd powers of s vanish, <s^2> = r^2, <s^4> = 3d r^4 / (d + 2)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    def radial(r):
        return (1 + r * r / 2 + 3 * d * r ** 4 / (24 * (d + 2))) * float(bump_profile(r)) * r ** (d - 1)

    return area * integrate.quad(radial, 0, 1, epsabs=0, epsrel=1e-13)[0]


def test_profile(z) -> np.ndarray:
    """Fixed polynomial-times-bump profile supported in the unit ball with unit integral."""
    z = [np.asarray(c, dtype=float) for c in z]
    r = np.sqrt(sum(c * c for c in z))
    return _profile_poly(z) * bump_profile(r) / _profile_mass(len(z))


test_profile.__test__ = False  # not a pytest test


def profile_moment(k) -> float:
    """int z^k phi(z) dz for the fixed profile (d <= 2)."""
    d = len(k)
    if d == 1:
        f = lambda x: x ** k[0] * float(test_profile([x]))
        return integrate.quad(f, -1, 1, epsabs=0, epsrel=1e-13)[0]
    if d == 2:
        f = lambda y, x: x ** k[0] * y ** k[1] * float(test_profile([x, y]))
        return integrate.dblquad(f, -1, 1, -1, 1, epsabs=0, epsrel=1e-12)[0]
    raise KernelError("profile moments are tabulated for d <= 2")


def rescaled_test(grid: Grid, x, lam: float) -> np.ndarray:
    """phi^lambda_x(y) = lambda^-d phi((y - x)/lambda) sampled on the grid."""
    if lam <= 0 or lam > grid.L / 2:
        raise KernelError(f"test scale {lam} must lie in (0, L/2]")
    disp = grid.displacement(x)
    return test_profile([u / lam for u in disp]) / lam ** grid.d
