"""Test helpers shared across modules."""

import numpy as np

from amortshap.classifier import AdditiveClassifier, ClassifierHandle, InteractionClassifier
from amortshap.core import TokenSequence


class TableGame(ClassifierHandle):
    """Single-class handle whose value is an arbitrary function of the unmasked index set.

    Tokens must be ``t0 .. t{L-1}``; the function receives a frozenset of indices.
    """

    descriptor = "test:table"
    num_classes = 1
    value_mode = "raw_score"

    def __init__(self, fn, pad="[PAD]"):
        self.fn = fn
        self.pad = pad

    def _predict_tokens(self, batch):
        out = []
        for toks in batch:
            present = frozenset(int(t[1:]) for t in toks if t != self.pad)
            out.append([float(self.fn(present))])
        return np.array(out)


def seq(L, prefix="t", iid="x"):
    return TokenSequence(iid, tuple(f"{prefix}{i}" for i in range(L)))


def random_additive(rng, L):
    w = {f"t{i}": float(rng.normal()) for i in range(L)}
    return AdditiveClassifier(w, bias=float(rng.normal())), seq(L)


def random_interaction(rng, L, n_pairs=3):
    toks = [f"t{i}" for i in range(L)]
    w = {t: float(rng.normal()) for t in toks}
    pairs = []
    for _ in range(n_pairs if L >= 2 else 0):
        a, b = rng.choice(L, size=2, replace=False)
        pairs.append([toks[a], toks[b], float(rng.normal() * 2)])
    return InteractionClassifier(w, float(rng.normal()), pairs), seq(L)
