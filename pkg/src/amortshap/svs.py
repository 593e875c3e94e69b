"""Shapley Value Sampling: average marginal contributions along random orderings."""

from __future__ import annotations

import numpy as np

from . import kernels
from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, Attribution, ContractViolation, Permutation, TokenSequence, derive_seed, rng_for
from .game import Game

PERM_STREAM = "perm"


def sample_permutation(L: int, rng: np.random.Generator) -> Permutation:
    if L < 1:
        raise ContractViolation("L must be >= 1")
    return Permutation(tuple(rng.permutation(L).tolist()))


def sample_permutations(L: int, seed: int, instance_id: str, m: int, start: int = 0) -> np.ndarray:
    """Orderings ``start .. start+m-1``; ordering j is drawn from its own derived seed.

    Because ordering j depends only on j, an m-sample run is a prefix of any
    longer run with the same seed.
    """
    out = np.empty((m, L), dtype=np.int64)
    for r in range(m):
        rng = rng_for(derive_seed(seed, instance_id, PERM_STREAM, start + r))
        out[r] = rng.permutation(L)
    return out


def walk_permutations(game: Game, perms: np.ndarray, phi0: np.ndarray) -> np.ndarray:
    """phi0 plus the marginal contributions along every ordering (not averaged)."""
    L = game.L
    if L <= kernels.MAX_KEY_BITS:
        vals = game.values_for_keys(kernels.prefix_keys(perms))
    else:
        masks = kernels.prefix_masks(perms).reshape(-1, L)
        vals = game.values(masks).reshape(len(perms), L + 1)
    return kernels.svs_accumulate(phi0, perms, vals)


def svs(x: TokenSequence, clf: ClassifierHandle, y: int, m: int, seed: int,
        pad: str = DEFAULT_PAD, game: Game | None = None) -> Attribution:
    if m < 1:
        raise ContractViolation(f"svs needs m >= 1, got {m}")
    game = game or Game(x, clf, y, pad)
    perms = sample_permutations(x.L, seed, x.id, m)
    phi = walk_permutations(game, perms, np.zeros(x.L)) / m
    total = game.v_full() - game.v_empty()
    return Attribution(x.id, int(y), tuple(phi.tolist()), "svs", int(m), int(seed),
                       clf.value_mode, total=total, n_evals=game.n_evals)
