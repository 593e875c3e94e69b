"""Exact Shapley values by enumerating all 2^L coalitions."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, Attribution, BudgetError, NumericalError, TokenSequence
from .game import Game

DEFAULT_CAP = 15
EFFICIENCY_TOL = 1e-9


def shapley_coefficients(L: int) -> np.ndarray:
    """coef[k] = 1 / (L * C(L-1, k)), from exact integer binomials."""
    return np.array([1.0 / (L * math.comb(L - 1, k)) for k in range(L)], dtype=np.float64)


def enumerate_values(game: Game, cap: int = DEFAULT_CAP) -> np.ndarray:
    """v(s) for every mask, indexed by integer key. Queries run in Gray-code order."""
    L = game.L
    if L > min(cap, kernels.MAX_KEY_BITS):
        raise BudgetError(
            f"exact enumeration needs 2^{L} evaluations; L={L} exceeds the cap of {cap}"
        )
    order = kernels.gray_code(L)
    vals = np.empty(1 << L, dtype=np.float64)
    vals[order] = game.values_for_keys(order)
    return vals


def shapley_from_table(vals: np.ndarray, L: int) -> np.ndarray:
    return kernels.exact_accumulate(vals, L, shapley_coefficients(L))


def exact_shapley(x: TokenSequence, clf: ClassifierHandle, y: int, pad: str = DEFAULT_PAD,
                  cap: int = DEFAULT_CAP, game: Game | None = None) -> Attribution:
    game = game or Game(x, clf, y, pad)
    if x.L > cap:
        raise BudgetError(
            f"exact enumeration needs 2^{x.L} evaluations; L={x.L} exceeds the cap of {cap}"
        )
    vals = enumerate_values(game, cap)
    phi = shapley_from_table(vals, x.L)
    total = float(vals[-1] - vals[0])
    gap = abs(math.fsum(phi) - total)
    if gap > EFFICIENCY_TOL * max(1.0, abs(total)):
        raise NumericalError(f"efficiency self-check failed for {x.id!r}: gap {gap:.3e}")
    return Attribution(x.id, int(y), tuple(phi.tolist()), "exact", 0, 0,
                       clf.value_mode, total=total, n_evals=game.n_evals)
