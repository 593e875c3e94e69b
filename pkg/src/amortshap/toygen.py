"""Synthetic token-classification datasets with a matching builtin classifier.

Every vocabulary token gets a small background weight; a subset of
"signal" tokens gets large weights, and pair rules between signal tokens
add non-additive bonuses. Gold labels are the classifier's own predictions,
optionally flipped with probability ``label_noise``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .classifier import AdditiveClassifier, BuiltinClassifier, InteractionClassifier
from .core import DEFAULT_PAD, ContractViolation, TokenSequence, derive_seed, rng_for


@dataclass
class ToySpec:
    n: int = 100
    lengths: Sequence[int] = (8, 16, 32)
    length_probs: Sequence[float] | None = None
    vocab_size: int = 200
    n_signal: int = 20
    signal_scale: float = 2.0
    background_scale: float = 0.2
    signal_rate: float = 0.25
    n_pairs: int = 5
    pair_scale: float = 2.0
    label_noise: float = 0.0
    num_classes: int = 2
    kind: str = "interaction"
    value_mode: str = "probability"
    seed: int = 0
    id_prefix: str = "x"
    vocab: Sequence[str] | None = None
    pad: str = DEFAULT_PAD

    def validate(self) -> None:
        vocab = self.vocabulary()
        if self.pad in vocab:
            raise ContractViolation(f"vocabulary contains the pad token {self.pad!r}")
        if len(set(vocab)) != len(vocab):
            raise ContractViolation("vocabulary has duplicate tokens")
        if self.n < 0:
            raise ContractViolation("n must be >= 0")
        if not self.lengths or min(self.lengths) < 1:
            raise ContractViolation("lengths must be positive")
        if self.length_probs is not None and (
            len(self.length_probs) != len(self.lengths) or abs(sum(self.length_probs) - 1.0) > 1e-9
        ):
            raise ContractViolation("length_probs must match lengths and sum to 1")
        if self.n_signal < 1 or self.signal_scale <= 0:
            raise ContractViolation("need at least one signal token with nonzero weight")
        if self.n_signal > len(vocab):
            raise ContractViolation(f"n_signal={self.n_signal} exceeds the vocabulary size {len(vocab)}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ContractViolation("label_noise must be in [0, 1)")
        if not 0.0 <= self.signal_rate <= 1.0:
            raise ContractViolation("signal_rate must be in [0, 1]")
        if self.num_classes < 2:
            raise ContractViolation("need at least 2 classes")
        if self.kind not in ("additive", "interaction"):
            raise ContractViolation(f"unknown classifier kind {self.kind!r}")
        if self.kind == "additive" and self.n_pairs:
            raise ContractViolation("additive toys take no pair rules")
        if self.n_pairs > self.n_signal * (self.n_signal - 1) // 2:
            raise ContractViolation("more pair rules than signal-token pairs")

    def vocabulary(self) -> list[str]:
        if self.vocab is not None:
            return [str(t) for t in self.vocab]
        return [f"w{i:04d}" for i in range(self.vocab_size)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        return d


@dataclass
class ToyDataset:
    seqs: list[TokenSequence]
    labels: list[int]
    classifier: BuiltinClassifier
    spec: ToySpec
    signal_tokens: list[str] = field(default_factory=list)


def _class_weights(rng, C, scale, signal_class=None, magnitude=0.0):
    if C == 2:
        w = rng.normal(0.0, scale)
        if signal_class is not None:
            w = magnitude if signal_class == 1 else -magnitude
        return float(w)
    w = rng.normal(0.0, scale, size=C)
    if signal_class is not None:
        w[signal_class] += magnitude
    return w.tolist()


def _symmetric(w: float) -> list[float]:
    return [-0.5 * w, 0.5 * w]


def generate_dataset(spec: ToySpec) -> ToyDataset:
    spec.validate()
    rng = rng_for(derive_seed(spec.seed, "toygen", "toygen"))
    C = spec.num_classes
    vocab = spec.vocabulary()
    signal_idx = rng.choice(len(vocab), size=spec.n_signal, replace=False)
    signal = [vocab[i] for i in sorted(signal_idx.tolist())]
    signal_set = set(signal)
    background = [t for t in vocab if t not in signal_set] or signal

    weights = {}
    for t in vocab:
        if t in signal_set:
            magnitude = spec.signal_scale * rng.uniform(0.5, 1.5)
            weights[t] = _class_weights(rng, C, spec.background_scale, int(rng.integers(C)), magnitude)
        else:
            weights[t] = _class_weights(rng, C, spec.background_scale)

    pairs = []
    if spec.kind == "interaction" and spec.n_pairs:
        all_pairs = [(a, b) for i, a in enumerate(signal) for b in signal[i + 1:]]
        chosen = rng.choice(len(all_pairs), size=spec.n_pairs, replace=False)
        for j in sorted(chosen.tolist()):
            a, b = all_pairs[j]
            bonus = spec.pair_scale * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
            pairs.append([a, b, float(bonus) if C == 2 else (np.eye(C)[int(rng.integers(C))] * bonus).tolist()])

    probs = spec.length_probs if spec.length_probs is not None else None
    lengths = rng.choice(np.asarray(spec.lengths), size=spec.n, p=probs)
    width = max(4, len(str(max(spec.n - 1, 0))))
    seqs = []
    for i, L in enumerate(lengths.tolist()):
        use_signal = rng.random(L) < spec.signal_rate
        sig = rng.integers(len(signal), size=L)
        bg = rng.integers(len(background), size=L)
        toks = tuple(signal[s] if u else background[b] for u, s, b in zip(use_signal, sig, bg))
        seqs.append(TokenSequence(f"{spec.id_prefix}{i:0{width}d}", toks))

    if C == 2:
        # symmetric binary logits: same probabilities as [0, w], but raw scores carry signal for both labels
        weights = {t: _symmetric(w) for t, w in weights.items()}
        pairs = [[a, b, _symmetric(bonus)] for a, b, bonus in pairs]
    cls = AdditiveClassifier if spec.kind == "additive" else InteractionClassifier
    unbiased = cls(weights, [0.0] * C, pairs, C, "raw_score")
    raw = unbiased.predict_batch(seqs) if seqs else np.zeros((0, C))
    # center the logits so the classes come out roughly balanced
    if C == 2:
        bias = _symmetric(-2.0 * float(np.median(raw[:, 1])) if len(raw) else 0.0)
    else:
        bias = (-raw.mean(axis=0)).tolist() if len(raw) else [0.0] * C
    clf = cls(weights, bias, pairs, C, spec.value_mode)

    labels = [clf.predicted_label(x) for x in seqs]
    if spec.label_noise > 0:
        for i in range(len(labels)):
            if rng.random() < spec.label_noise:
                labels[i] = int((labels[i] + rng.integers(1, C)) % C)
    return ToyDataset(seqs, labels, clf, spec, signal)


def balanced_subsample(seqs: Sequence[TokenSequence], labels: Sequence[int], n: int, seed: int,
                       num_classes: int | None = None) -> tuple[list[TokenSequence], list[int]]:
    """Exactly n / C instances per class, chosen by a seeded shuffle; original order kept."""
    C = num_classes if num_classes is not None else max(labels) + 1
    if n % C:
        raise ContractViolation(f"n={n} is not divisible by the class count {C}")
    per = n // C
    rng = rng_for(derive_seed(seed, "balanced_subsample", "subsample"))
    keep = []
    for c in range(C):
        members = [i for i, y in enumerate(labels) if y == c]
        if len(members) < per:
            raise ContractViolation(f"class {c} has {len(members)} instances, need {per}")
        picked = rng.permutation(len(members))[:per]
        keep.extend(members[j] for j in picked.tolist())
    keep.sort()
    return [seqs[i] for i in keep], [labels[i] for i in keep]


def shifted_instances(toy: ToyDataset, n: int, lengths: Sequence[int], signal_rate: float, seed: int,
                      id_prefix: str = "t") -> list[TokenSequence]:
    """Fresh instances for the same classifier under a different token/length distribution."""
    rng = rng_for(derive_seed(seed, "toygen", "shift"))
    vocab = toy.spec.vocabulary()
    signal = toy.signal_tokens
    signal_set = set(signal)
    background = [t for t in vocab if t not in signal_set] or signal
    width = max(4, len(str(max(n - 1, 0))))
    out = []
    for i, L in enumerate(rng.choice(np.asarray(lengths), size=n).tolist()):
        use_signal = rng.random(L) < signal_rate
        sig = rng.integers(len(signal), size=L)
        bg = rng.integers(len(background), size=L)
        toks = tuple(signal[s] if u else background[b] for u, s, b in zip(use_signal, sig, bg))
        out.append(TokenSequence(f"{id_prefix}{i:0{width}d}", toks))
    return out
