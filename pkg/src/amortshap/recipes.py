"""Toy-scale experiment recipes built from the estimator modules."""

from __future__ import annotations

import itertools
import time
from dataclasses import replace
from typing import Sequence

import numpy as np

from .amortized import (
    AmortizedConfig,
    ReferenceDataset,
    build_reference_dataset,
    mean_spearman,
    split_records,
    train_amortized,
)
from .classifier import ClassifierHandle
from .core import derive_seed
from .kernelshap import kernelshap
from .stability import spearman_flagged
from .toygen import ToyDataset, shifted_instances


def learning_curve(refs: ReferenceDataset, fractions: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 1.0),
                   config: AmortizedConfig | None = None) -> list[dict]:
    """Held-out Spearman vs the references when training on a fraction of the training split."""
    config = config or AmortizedConfig()
    rows = []
    for frac in fractions:
        _, rep = train_amortized(refs, replace(config, train_fraction=float(frac)))
        rows.append({"fraction": float(frac), "n_train": rep.n_train, "test_spearman": rep.test_spearman,
                     "test_mse": rep.test_mse, "best_epoch": rep.best_epoch})
    return rows


def training_sensitivity(refs: ReferenceDataset, seeds: Sequence[int] = range(5), fraction: float = 1.0,
                         config: AmortizedConfig | None = None) -> dict:
    """Average pairwise Spearman between surrogates trained with different seeds.

    The seed changes both the initialization and, below 100%, the training subsample.
    """
    config = config or AmortizedConfig()
    models = [train_amortized(refs, replace(config, seed=int(s), train_fraction=fraction))[0] for s in seeds]
    test = split_records(refs, config)["test"]
    rhos = []
    for r in test:
        if r.x.L < 2:
            continue
        preds = [mdl.predict(r.x.tokens, r.label) for mdl in models]
        for a, b in itertools.combinations(preds, 2):
            rho, degenerate = spearman_flagged(a, b)
            if not degenerate:
                rhos.append(rho)
    return {"fraction": fraction, "seeds": list(seeds), "mean_pairwise_spearman": float(np.mean(rhos)),
            "std_pairwise_spearman": float(np.std(rhos)), "n_pairs": len(rhos)}


def domain_transfer(toy: ToyDataset, source_refs: ReferenceDataset, n_target: int = 200,
                    target_lengths: Sequence[int] = (12, 24), target_signal_rate: float = 0.4,
                    ks_budgets: Sequence[int] = (100, 200), config: AmortizedConfig | None = None,
                    seed: int = 0) -> dict:
    """Train on the source domain, compare amortized and KernelSHAP against SVS-25 on a shifted domain."""
    clf: ClassifierHandle = toy.classifier
    model, _ = train_amortized(source_refs, config or AmortizedConfig())
    target = shifted_instances(toy, n_target, target_lengths, target_signal_rate, seed)
    target_refs = build_reference_dataset(target, clf, "svs", 25, master_seed=seed)
    t0 = time.perf_counter()
    am = mean_spearman(model, target_refs.records)
    out = {"amortized": {"spearman": am, "seconds_per_instance": (time.perf_counter() - t0) / len(target)}}
    for m in ks_budgets:
        rhos, t0 = [], time.perf_counter()
        for r in target_refs.records:
            phi = kernelshap(r.x, clf, r.label, m, derive_seed(seed, r.x.id, "ks")).phi
            rho, degenerate = spearman_flagged(phi, r.scores)
            if not degenerate:
                rhos.append(rho)
        out[f"ks-{m}"] = {"spearman": float(np.mean(rhos)),
                          "seconds_per_instance": (time.perf_counter() - t0) / len(target)}
    return out
