"""Slow, independent reference implementations for cross-checking the estimators."""

import itertools
import math
from fractions import Fraction


def brute_force_shapley(v, L):
    """Shapley values straight from the subset-sum definition, with exact rational weights."""
    phi = []
    for i in range(L):
        others = [j for j in range(L) if j != i]
        acc = 0.0
        for k in range(L):
            w = Fraction(math.factorial(k) * math.factorial(L - k - 1), math.factorial(L))
            for s in itertools.combinations(others, k):
                s = frozenset(s)
                acc += float(w) * (v(s | {i}) - v(s))
        phi.append(acc)
    return phi


def permutation_shapley(v, L):
    """Average marginal contribution over all L! orderings."""
    phi = [0.0] * L
    n = 0
    for order in itertools.permutations(range(L)):
        n += 1
        s = frozenset()
        prev = v(s)
        for i in order:
            s = s | {i}
            cur = v(s)
            phi[i] += cur - prev
            prev = cur
    return [p / n for p in phi]


def game_fn(clf, x, y, pad="[PAD]"):
    def v(s):
        return clf.value([t if i in s else pad for i, t in enumerate(x.tokens)], y)
    return v
