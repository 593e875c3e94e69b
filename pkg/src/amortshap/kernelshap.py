"""KernelSHAP: Shapley-kernel mask sampling and an efficiency-constrained regression.

The regression target is v(s) - v(empty) (a fixed intercept), and the
solution is constrained to sum to v(full) - v(empty). The constraint is
enforced through a single Lagrange multiplier in the KKT system of the
weighted normal equations.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, Attribution, BudgetError, ContractViolation, Mask, NumericalError, TokenSequence, derive_seed, rng_for
from .exact import DEFAULT_CAP
from .game import Game

RIDGE_SCALE = 1e-6
KS_STREAM = "ks"


def size_distribution(L: int) -> np.ndarray:
    """P(|s| = k) for k = 1..L-1, proportional to (L-1) / (k (L-k))."""
    if L < 2:
        raise ContractViolation("the Shapley kernel needs L >= 2")
    k = np.arange(1, L, dtype=np.float64)
    q = (L - 1) / (k * (L - k))
    return q / q.sum()


def kernel_weight(L: int, size: int) -> float:
    """Unnormalized p(s) for a single mask of the given size; infinite at 0 and L."""
    if size <= 0 or size >= L:
        return math.inf
    return (L - 1) / (math.comb(L, size) * size * (L - size))


def sample_kernel_mask_array(L: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if L < 2:
        raise ContractViolation("the Shapley kernel needs L >= 2")
    if m < 1:
        raise ContractViolation(f"need m >= 1 masks, got {m}")
    sizes = rng.choice(np.arange(1, L), size=m, p=size_distribution(L))
    # uniform subset of each size: keep the `size` positions with the smallest keys
    order = np.argsort(rng.random((m, L)), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(L), (m, L)), axis=1)
    return (ranks < sizes[:, None]).astype(np.uint8)


def sample_kernel_masks(L: int, m: int, rng: np.random.Generator) -> list[Mask]:
    return [Mask(tuple(row.tolist())) for row in sample_kernel_mask_array(L, m, rng)]


def solve_constrained_wls(S: np.ndarray, w: np.ndarray, target: np.ndarray, total: float,
                          n_samples: int | None = None) -> np.ndarray:
    """argmin_phi sum_k w_k (target_k - S_k . phi)^2  s.t.  sum(phi) = total.

    A ridge of RIDGE_SCALE * trace(Gram) / L is added only when the Gram
    matrix is rank deficient.
    """
    S = np.asarray(S, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    L = S.shape[1]
    SW = S.T * w
    gram = SW @ S
    rhs = SW @ target
    rank = int(np.linalg.matrix_rank(gram))
    if rank < L:
        tr = float(np.trace(gram))
        gram = gram + np.eye(L) * (RIDGE_SCALE * (tr / L if tr > 0 else 1.0))
    kkt = np.zeros((L + 1, L + 1))
    kkt[:L, :L] = gram
    kkt[:L, L] = 1.0
    kkt[L, :L] = 1.0
    b = np.concatenate([rhs, [total]])
    try:
        sol = np.linalg.solve(kkt, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular KKT system (m={n_samples if n_samples is not None else len(S)}, rank={rank}, L={L})"
        ) from exc
    phi = sol[:L]
    if not np.all(np.isfinite(phi)):
        raise NumericalError(f"non-finite KernelSHAP solution (m={n_samples}, rank={rank}, L={L})")
    # absorb solver round-off so the constraint holds to the last bits
    phi = phi + (total - math.fsum(phi)) / L
    return phi


def _single_token(x, clf, y, game, budget, seed):
    total = game.v_full() - game.v_empty()
    return Attribution(x.id, int(y), (total,), "ks", int(budget), int(seed),
                       clf.value_mode, total=total, n_evals=game.n_evals)


def kernelshap(x: TokenSequence, clf: ClassifierHandle, y: int, m: int, seed: int,
               pad: str = DEFAULT_PAD, game: Game | None = None) -> Attribution:
    if m < 1:
        raise ContractViolation(f"kernelshap needs m >= 1, got {m}")
    game = game or Game(x, clf, y, pad)
    if x.L == 1:
        return _single_token(x, clf, y, game, m, seed)
    rng = rng_for(derive_seed(seed, x.id, KS_STREAM, 0))
    masks = sample_kernel_mask_array(x.L, m, rng)
    # duplicates are merged with multiplicity weights
    uniq, counts = np.unique(masks, axis=0, return_counts=True)
    v0 = game.v_empty()
    total = game.v_full() - v0
    target = game.values(uniq) - v0
    phi = solve_constrained_wls(uniq, counts / m, target, total, n_samples=m)
    return Attribution(x.id, int(y), tuple(phi.tolist()), "ks", int(m), int(seed),
                       clf.value_mode, total=total, n_evals=game.n_evals)


def kernelshap_enumerated(x: TokenSequence, clf: ClassifierHandle, y: int, pad: str = DEFAULT_PAD,
                          cap: int = DEFAULT_CAP, game: Game | None = None) -> Attribution:
    """Population version: regression over every proper non-empty mask, weighted by p(s)."""
    game = game or Game(x, clf, y, pad)
    L = x.L
    if L > cap:
        raise BudgetError(f"enumerated KernelSHAP needs 2^{L} evaluations; L={L} exceeds the cap of {cap}")
    if L == 1:
        return _single_token(x, clf, y, game, 0, 0)
    keys = np.arange(1, (1 << L) - 1, dtype=np.int64)
    S = kernels.keys_to_masks(keys, L)
    sizes = kernels.popcount(keys)
    w = np.array([kernel_weight(L, int(k)) for k in range(L + 1)])[sizes]
    w = w / w.sum()
    v0 = game.v_empty()
    total = game.v_full() - v0
    target = game.values_for_keys(keys) - v0
    phi = solve_constrained_wls(S, w, target, total)
    return Attribution(x.id, int(y), tuple(phi.tolist()), "ks", 0, 0,
                       clf.value_mode, total=total, n_evals=game.n_evals)
