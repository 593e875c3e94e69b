import math
from collections import Counter

import numpy as np
import pytest

from amortshap.core import ContractViolation, TokenSequence
from amortshap.runner import write_dataset
from amortshap.toygen import ToySpec, balanced_subsample, generate_dataset, shifted_instances


def test_rerun_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        toy = generate_dataset(ToySpec(n=100, seed=7))
        write_dataset(tmp_path / f"{name}.jsonl", toy.seqs, toy.labels)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


@pytest.mark.parametrize("kind", ["interaction", "additive"])
def test_noiseless_labels_match_classifier(kind):
    spec = ToySpec(n=300, kind=kind, n_pairs=0 if kind == "additive" else 5, seed=2,
                   value_mode="raw_score" if kind == "additive" else "probability")
    toy = generate_dataset(spec)
    assert [toy.classifier.predicted_label(x) for x in toy.seqs] == toy.labels


def test_label_noise_flips_some_labels():
    toy = generate_dataset(ToySpec(n=1000, seed=2, label_noise=0.2))
    agree = np.mean([toy.classifier.predicted_label(x) == y for x, y in zip(toy.seqs, toy.labels)])
    assert 0.74 < agree < 0.86


def test_length_buckets_within_binomial_bounds():
    n = 3000
    toy = generate_dataset(ToySpec(n=n, lengths=(8, 16, 32), seed=4))
    counts = Counter(x.L for x in toy.seqs)
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    for L in (8, 16, 32):
        assert abs(counts[L] - n / 3) <= 3 * sigma


def test_multiclass_toy():
    toy = generate_dataset(ToySpec(n=200, num_classes=3, seed=1))
    assert set(toy.labels) <= {0, 1, 2} and len(set(toy.labels)) == 3
    assert toy.classifier.num_classes == 3


@pytest.mark.parametrize("bad", [
    dict(vocab=["a", "[PAD]"], n_signal=1),
    dict(signal_scale=0.0),
    dict(n_signal=0),
    dict(n_signal=500),
    dict(lengths=()),
    dict(label_noise=1.0),
    dict(kind="additive", n_pairs=2),
    dict(kind="other"),
    dict(n_pairs=1000),
])
def test_infeasible_specs_rejected(bad):
    with pytest.raises(ContractViolation):
        generate_dataset(ToySpec(**bad))


def test_classes_roughly_balanced():
    toy = generate_dataset(ToySpec(n=400, seed=1))
    c = Counter(toy.labels)
    assert abs(c[0] - c[1]) <= 40


def test_balanced_subsample_counts():
    toy = generate_dataset(ToySpec(n=1200, seed=1))
    seqs, labels = balanced_subsample(toy.seqs, toy.labels, 500, seed=0)
    assert Counter(labels) == {0: 250, 1: 250}
    ids = [x.id for x in seqs]
    assert ids == sorted(ids) and len(set(ids)) == 500
    assert balanced_subsample(toy.seqs, toy.labels, 500, seed=0)[0] == seqs


def test_balanced_subsample_exhaustive_and_errors():
    seqs = [TokenSequence(f"s{i}", ("a",)) for i in range(4)]
    got, labels = balanced_subsample(seqs, [0, 1, 0, 1], 4, seed=3)
    assert got == seqs and labels == [0, 1, 0, 1]
    with pytest.raises(ContractViolation):
        balanced_subsample(seqs, [0, 1, 0, 1], 3, seed=3)
    with pytest.raises(ContractViolation, match="class 1"):
        balanced_subsample(seqs, [0, 0, 0, 1], 4, seed=3)


def test_shifted_instances_use_given_lengths():
    toy = generate_dataset(ToySpec(n=10, seed=1))
    out = shifted_instances(toy, 50, (12, 24), 0.5, seed=2)
    assert {x.L for x in out} == {12, 24} and len({x.id for x in out}) == 50
    vocab = set(toy.spec.vocabulary())
    assert all(t in vocab for x in out for t in x.tokens)
