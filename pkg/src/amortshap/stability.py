"""Cross-seed ranking stability: Spearman, Top-K intersection and MSE over seed pairs."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import ContractViolation, TokenSequence

log = logging.getLogger(__name__)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractViolation(f"score vectors must have equal 1-d shapes, got {a.shape} and {b.shape}")
    return a, b


def spearman_flagged(a, b) -> tuple[float, bool]:
    """Pearson correlation of average-tie ranks, and whether either ranking is constant."""
    a, b = _pair(a, b)
    if len(a) < 2:
        raise ContractViolation("spearman needs at least 2 scores")
    ra = rankdata(a) - (len(a) + 1) / 2.0
    rb = rankdata(b) - (len(b) + 1) / 2.0
    # ranks are half-integers, so these dot products are exact and a == b gives exactly 1
    saa, sbb = float(ra @ ra), float(rb @ rb)
    if saa == 0.0 or sbb == 0.0:
        return 0.0, True
    return float(min(1.0, max(-1.0, float(ra @ rb) / math.sqrt(saa * sbb)))), False


def spearman(a, b) -> float:
    return spearman_flagged(a, b)[0]


def topk_indices(scores, K: int) -> np.ndarray:
    """Indices of the K largest scores; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= K <= len(scores):
        raise ContractViolation(f"K={K} outside [0, {len(scores)}]")
    return np.argsort(-scores, kind="stable")[:K]


def topk_intersection(a, b, K: int) -> int:
    a, b = _pair(a, b)
    return len(set(topk_indices(a, K).tolist()) & set(topk_indices(b, K).tolist()))


def pairwise_mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def bucket_label(L: int, buckets: Sequence[int]) -> str:
    for edge in sorted(buckets):
        if L <= edge:
            return f"<={edge}"
    return f">{max(buckets)}" if buckets else "all"


@dataclass
class InstanceStability:
    id: str
    L: int
    bucket: str
    n_pairs: int
    spearman: float | None
    n_degenerate: int
    topk: dict
    mse: float
    seconds: float
    error: str | None = None


@dataclass
class StabilityReport:
    method: str
    m: int
    seeds: list
    topk: list
    buckets: list
    n_instances: int
    n_failed: int
    aggregate: dict
    per_bucket: dict
    instances: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    def write_csv(self, path) -> None:
        cols = ["id", "L", "bucket", "n_pairs", "spearman", "n_degenerate", "mse", "seconds", "error"]
        cols += [f"top{k}" for k in self.topk]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for r in self.instances:
                row = [r["id"], r["L"], r["bucket"], r["n_pairs"], r["spearman"], r["n_degenerate"],
                       r["mse"], r["seconds"], r["error"]]
                row += [r["topk"].get(str(k)) for k in self.topk]
                w.writerow(row)


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _aggregate(rows: list[InstanceStability], Ks) -> dict:
    ok = [r for r in rows if r.error is None]
    return {
        "n": len(ok),
        "spearman": _mean([r.spearman for r in ok]),
        "n_spearman": sum(1 for r in ok if r.spearman is not None),
        "topk": {str(k): _mean([r.topk.get(str(k)) for r in ok]) for k in Ks},
        "mse": _mean([r.mse for r in ok]),
        "seconds_per_instance": _mean([r.seconds for r in ok]),
    }


def instance_stability(x: TokenSequence, runs: Sequence[np.ndarray], Ks: Sequence[int],
                       buckets: Sequence[int], seconds: float = 0.0) -> InstanceStability:
    rhos, n_degen, mses = [], 0, []
    tops: dict[str, list] = {str(k): [] for k in Ks if k <= x.L}
    pairs = list(itertools.combinations(range(len(runs)), 2))
    for i, j in pairs:
        a, b = runs[i], runs[j]
        if x.L >= 2:
            rho, degenerate = spearman_flagged(a, b)
            if degenerate:
                n_degen += 1
            else:
                rhos.append(rho)
        for k in Ks:
            if k <= x.L:
                tops[str(k)].append(topk_intersection(a, b, k))
        mses.append(pairwise_mse(a, b))
    return InstanceStability(
        id=x.id, L=x.L, bucket=bucket_label(x.L, buckets), n_pairs=len(pairs),
        spearman=float(np.mean(rhos)) if rhos else None, n_degenerate=n_degen,
        topk={k: float(np.mean(v)) for k, v in tops.items()},
        mse=float(np.mean(mses)), seconds=seconds,
    )


def stability_sweep(dataset: Sequence[TokenSequence], explain: Callable[[TokenSequence, int], np.ndarray],
                    seeds: Sequence[int], Ks: Sequence[int] = (5, 10), buckets: Sequence[int] = (8, 16, 32),
                    method: str = "?", m: int = 0, workers: int = 1) -> StabilityReport:
    """Run ``explain(x, master_seed)`` once per seed per instance and compare all seed pairs.

    Failed instances are recorded and excluded from the aggregates.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ContractViolation("stability needs at least 2 seeds")

    def one(x: TokenSequence) -> InstanceStability:
        t0 = time.perf_counter()
        try:
            runs = [np.asarray(explain(x, s), dtype=np.float64) for s in seeds]
        except Exception as exc:  # noqa: BLE001 - recorded per instance
            return InstanceStability(x.id, x.L, bucket_label(x.L, buckets), 0, None, 0, {}, math.nan,
                                     0.0, error=f"{type(exc).__name__}: {exc}")
        seconds = (time.perf_counter() - t0) / len(seeds)
        return instance_stability(x, runs, Ks, buckets, seconds)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, dataset))
    else:
        rows = [one(x) for x in dataset]
    failed = [r for r in rows if r.error is not None]
    if failed:
        log.warning("%d of %d instances failed and were excluded", len(failed), len(rows))
    labels = sorted({r.bucket for r in rows}, key=lambda s: (s.startswith(">"), int(s.lstrip("<=>")) if s[0] in "<>" else 0))
    per_bucket = {b: _aggregate([r for r in rows if r.bucket == b], Ks) for b in labels}
    return StabilityReport(
        method=method, m=int(m), seeds=seeds, topk=list(Ks), buckets=list(buckets),
        n_instances=len(rows), n_failed=len(failed), aggregate=_aggregate(rows, Ks),
        per_bucket=per_bucket, instances=[asdict(r) for r in rows],
    )
