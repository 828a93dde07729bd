"""Estimator-style wrappers for the two genuinely statistical fits.

They follow the familiar get_params / set_params / fit-returns-self shape
without depending on any machine-learning library.
"""

from __future__ import annotations

import inspect
import math
from typing import Iterable, Sequence

from ..kernels import Grid, KernelSpec
from ..symbols import DegreeParams, Symbol, parse_symbol
from .checks import FitResult, scaling_fit
from .interpret import Character, bphz_characters
from .noise import MCSpec


class _Params:
    def get_params(self, deep: bool = True) -> dict:
        names = [p for p in inspect.signature(type(self).__init__).parameters if p != "self"]
        return {n: getattr(self, n) for n in names}

    def set_params(self, **params):
        valid = self.get_params()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class BPHZCharacterEstimator(_Params):
    """Monte Carlo BPHZ character over the extraction closure of the fitted symbols.

    After ``fit`` the estimate is in ``character_`` (values and standard errors).
    """

    def __init__(self, params: DegreeParams, eps: float | None = 0.1, grid: Grid | None = None,
                 samples: int = 100, seed: int = 0, kernel: KernelSpec | None = None):
        self.params = params
        self.eps = eps
        self.grid = grid
        self.samples = samples
        self.seed = seed
        self.kernel = kernel

    def fit(self, symbols: Iterable[Symbol | str], y=None):
        syms = [parse_symbol(s, self.params) if isinstance(s, str) else s for s in symbols]
        grid = self.grid or Grid(64, self.params.d)
        self.character_ = bphz_characters(syms, self.eps, MCSpec(self.samples, self.seed), grid, self.params,
                                          kernel=self.kernel)
        return self

    def transform(self, symbols: Iterable[Symbol | str]) -> list[float]:
        ch: Character = self.character_
        return [ch[parse_symbol(s, self.params) if isinstance(s, str) else s] for s in symbols]


class ScalingExponentEstimator(_Params):
    """Power-law exponent of (E|P_lambda|^p)^(1/p) in lambda.

    ``fit(lambdas, moments)`` takes per-sample p-th moments at each scale.
    """

    def __init__(self, p: float = 2.0, min_decades: float = 1.5):
        self.p = p
        self.min_decades = min_decades

    def fit(self, lambdas: Sequence[float], moments: Sequence[Sequence[float]]):
        self.result_: FitResult = scaling_fit(lambdas, moments, self.p, self.min_decades)
        self.exponent_ = self.result_.slope
        self.ci_ = self.result_.ci
        return self

    def predict(self, lambdas: Sequence[float]) -> list[float]:
        r = self.result_
        return [math.exp(r.intercept) * lam ** r.slope for lam in lambdas]
