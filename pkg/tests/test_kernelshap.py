import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from amortshap.core import ContractViolation, NumericalError, TokenSequence, derive_seed, rng_for
from amortshap.exact import exact_shapley
from amortshap.kernelshap import (
    KS_STREAM,
    kernel_weight,
    kernelshap,
    kernelshap_enumerated,
    sample_kernel_mask_array,
    sample_kernel_masks,
    size_distribution,
    solve_constrained_wls,
)
from helpers import random_additive, random_interaction


def analytic_size_marginals(L):
    """Sum p(s) over subsets of each size, with exact rationals."""
    q = [Fraction(math.comb(L, k) * (L - 1), math.comb(L, k) * k * (L - k)) for k in range(1, L)]
    total = sum(q)
    return [float(v / total) for v in q]


def test_l4_marginals_are_4_3_4_over_11():
    np.testing.assert_allclose(analytic_size_marginals(4), [4 / 11, 3 / 11, 4 / 11], rtol=1e-15)
    np.testing.assert_allclose(size_distribution(4), [4 / 11, 3 / 11, 4 / 11], rtol=1e-15)


@pytest.mark.parametrize("L", [4, 6])
def test_size_histogram_chi_square(L):
    masks = sample_kernel_mask_array(L, 100_000, rng_for(L))
    counts = np.bincount(masks.sum(axis=1), minlength=L + 1)
    assert counts[0] == counts[L] == 0
    expected = np.array(analytic_size_marginals(L)) * 100_000
    assert stats.chisquare(counts[1:L], expected).pvalue > 0.01


def test_l2_masks():
    masks = sample_kernel_mask_array(2, 20_000, rng_for(1))
    rows = {tuple(r) for r in masks.tolist()}
    assert rows == {(1, 0), (0, 1)}
    assert stats.binomtest(int(masks[:, 0].sum()), 20_000, 0.5).pvalue > 0.01


def test_subsets_uniform_within_size():
    masks = sample_kernel_mask_array(4, 60_000, rng_for(2))
    two = masks[masks.sum(axis=1) == 2]
    _, counts = np.unique(two, axis=0, return_counts=True)
    assert len(counts) == 6 and stats.chisquare(counts).pvalue > 0.01


def test_mask_objects_and_preconditions():
    ms = sample_kernel_masks(5, 3, rng_for(0))
    assert len(ms) == 3 and all(1 <= m.size <= 4 for m in ms)
    with pytest.raises(ContractViolation):
        sample_kernel_mask_array(1, 5, rng_for(0))
    with pytest.raises(ContractViolation):
        sample_kernel_mask_array(4, 0, rng_for(0))


def test_kernel_weight_formula():
    assert kernel_weight(4, 0) == math.inf and kernel_weight(4, 4) == math.inf
    assert kernel_weight(4, 2) == pytest.approx(3 / (6 * 2 * 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**63 - 1), st.integers(0, 2**32 - 1))
def test_additive_recovery_with_spanning_masks(L, seed, wseed):
    clf, x = random_additive(np.random.default_rng(wseed), L)
    w = np.array([clf.token_weight(t) for t in x.tokens])
    m = 4 * L
    masks = sample_kernel_mask_array(L, m, rng_for(derive_seed(seed, x.id, KS_STREAM, 0)))
    assume(np.linalg.matrix_rank(masks.astype(float)) == L)
    a = kernelshap(x, clf, 1, m, seed)
    np.testing.assert_allclose(a.phi, w, atol=1e-9, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 24), st.integers(1, 300), st.integers(0, 2**63 - 1), st.integers(0, 2**32 - 1))
def test_constraint_holds_every_run(L, m, seed, cseed):
    clf, x = random_interaction(np.random.default_rng(cseed), L)
    a = kernelshap(x, clf, 1, m, seed)
    assert np.all(np.isfinite(a.phi))
    assert a.efficiency_gap() <= 1e-9


def test_single_token_bypasses_sampling():
    clf, x = random_interaction(np.random.default_rng(0), 1, n_pairs=0)
    a = kernelshap(x, clf, 1, 10, 3)
    assert a.scores == (clf.value(x, 1) - clf.value(["[PAD]"], 1),) and a.n_evals == 2


def test_enumerated_matches_exact(interaction_toy):
    clf = interaction_toy.classifier
    for x in interaction_toy.seqs[:10]:
        y = clf.predicted_label(x)
        np.testing.assert_allclose(kernelshap_enumerated(x, clf, y).phi, exact_shapley(x, clf, y).phi, atol=1e-6)


def test_enumerated_and_game_and_additive(and_game, additive_clf):
    clf, x = and_game
    np.testing.assert_allclose(kernelshap_enumerated(x, clf, 0).phi, [0.5, 0.5], atol=1e-12)
    x3 = TokenSequence("x", ("a", "b", "c"))
    np.testing.assert_allclose(kernelshap_enumerated(x3, additive_clf, 1).phi, [0.5, -0.2, 0.1], atol=1e-12)


def test_error_shrinks_with_budget(interaction_toy):
    clf = interaction_toy.classifier
    x = interaction_toy.seqs[0]
    y = clf.predicted_label(x)
    ref = exact_shapley(x, clf, y).phi
    errs = [np.mean([np.mean((kernelshap(x, clf, y, m, s).phi - ref) ** 2) for s in range(20)])
            for m in (100, 1000, 10_000)]
    assert errs[0] >= errs[1] >= errs[2]


def test_duplicated_masks_with_halved_weights():
    rng = np.random.default_rng(5)
    S = rng.integers(0, 2, size=(12, 5)).astype(float)
    w = rng.random(12)
    t = rng.normal(size=12)
    a = solve_constrained_wls(S, w, t, 0.7)
    b = solve_constrained_wls(np.vstack([S, S]), np.concatenate([w, w]) / 2, np.concatenate([t, t]), 0.7)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_rank_deficient_system_still_solves():
    S = np.array([[1, 1, 0, 0]], dtype=float)
    phi = solve_constrained_wls(S, np.array([1.0]), np.array([0.4]), 1.0)
    assert np.all(np.isfinite(phi)) and abs(math.fsum(phi) - 1.0) <= 1e-12


def test_non_finite_solution_is_numerical_error():
    S = np.eye(3)
    with pytest.raises(NumericalError):
        solve_constrained_wls(S, np.ones(3), np.array([np.nan, 0, 0]), 1.0)


def test_invalid_budget():
    clf, x = random_additive(np.random.default_rng(0), 3)
    with pytest.raises(ContractViolation):
        kernelshap(x, clf, 1, 0, 0)


def test_deterministic_given_seed():
    clf, x = random_interaction(np.random.default_rng(3), 12)
    assert kernelshap(x, clf, 1, 50, 9).scores == kernelshap(x, clf, 1, 50, 9).scores
    assert kernelshap(x, clf, 1, 50, 9).scores != kernelshap(x, clf, 1, 50, 10).scores
