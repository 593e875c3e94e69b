"""Feature-selection faithfulness: mask the top-alpha tokens and re-classify.

Accuracy is measured against the classifier's own predictions on the
unmasked inputs, so the metric needs no gold labels.
"""

from __future__ import annotations

import csv
import math
from typing import Mapping, Sequence

import numpy as np

from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, ContractViolation, TokenSequence, derive_seed, rng_for
from .stability import topk_indices

DEFAULT_ALPHAS = (0.01, 0.05, 0.10, 0.20)


def n_masked(alpha: float, L: int) -> int:
    """ceil(alpha * L), rounding away float noise such as 0.3 * 10 = 3.0000000000000004."""
    if alpha <= 0:
        return 0
    return min(L, max(1, math.ceil(round(alpha * L, 9))))


def mask_top(x: TokenSequence, scores, k: int, pad: str = DEFAULT_PAD) -> tuple[str, ...]:
    drop = set(topk_indices(scores, k).tolist())
    return tuple(pad if i in drop else t for i, t in enumerate(x.tokens))


def faithfulness_curve(dataset: Sequence[TokenSequence], attributions: Mapping[str, Sequence[float]],
                       clf: ClassifierHandle, alphas: Sequence[float] = DEFAULT_ALPHAS,
                       labels: Mapping[str, int] | None = None, pad: str = DEFAULT_PAD) -> list[dict]:
    """Rows ``{alpha, accuracy, n_instances}`` for alpha = 0 and every requested fraction, ascending."""
    missing = [x.id for x in dataset if x.id not in attributions]
    if missing:
        raise ContractViolation(f"no attribution for {len(missing)} instance(s), e.g. {missing[:3]}")
    for x in dataset:
        if len(attributions[x.id]) != x.L:
            raise ContractViolation(f"attribution for {x.id!r} has {len(attributions[x.id])} scores, L={x.L}")
    if labels is None:
        labels = {x.id: clf.predicted_label(x) for x in dataset}
    grid = sorted({0.0, *(float(a) for a in alphas)})
    rows = []
    for alpha in grid:
        inputs = [mask_top(x, attributions[x.id], n_masked(alpha, x.L), pad) for x in dataset]
        values = clf.predict_batch(inputs) if inputs else np.zeros((0, clf.num_classes))
        preds = np.argmax(values, axis=1)
        hits = sum(int(p == labels[x.id]) for p, x in zip(preds, dataset))
        rows.append({"alpha": alpha, "accuracy": hits / len(dataset) if dataset else math.nan,
                     "n_instances": len(dataset)})
    return rows


def random_attributions(dataset: Sequence[TokenSequence], seed: int) -> dict[str, np.ndarray]:
    """Uniform-random scores, the uninformed baseline."""
    return {x.id: rng_for(derive_seed(seed, x.id, "random")).random(x.L) for x in dataset}


def write_curve_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["alpha", "accuracy", "n_instances"])
        w.writeheader()
        w.writerows(rows)
