"""Dataset-level drivers: JSONL I/O, method dispatch, and manifest-stamped attribution runs."""

from __future__ import annotations

import datetime as _dt
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, METHODS, Attribution, ContractViolation, RunManifest, TokenSequence, derive_seed
from .exact import DEFAULT_CAP, exact_shapley
from .game import Game
from .kernelshap import kernelshap
from .svs import svs

log = logging.getLogger(__name__)


def read_dataset(path, pad: str = DEFAULT_PAD) -> tuple[list[TokenSequence], list[int | None]]:
    seqs, labels, seen = [], [], set()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            x = TokenSequence(str(d["id"]), tuple(d["tokens"])).check_pad(pad)
            if x.id in seen:
                raise ContractViolation(f"{path}:{lineno}: duplicate instance id {x.id!r}")
            seen.add(x.id)
            seqs.append(x)
            labels.append(d.get("label"))
    return seqs, labels


def write_dataset(path, seqs: Sequence[TokenSequence], labels: Sequence[int | None] | None = None) -> None:
    with open(path, "w") as f:
        for i, x in enumerate(seqs):
            d = {"id": x.id, "tokens": list(x.tokens)}
            if labels is not None and labels[i] is not None:
                d["label"] = int(labels[i])
            f.write(json.dumps(d, separators=(",", ":")) + "\n")


def resolve_label(x: TokenSequence, clf: ClassifierHandle, label: str | int) -> int:
    if label in ("pred", None):
        return clf.predicted_label(x)
    return int(label)


def explain_instance(x: TokenSequence, clf: ClassifierHandle, method: str, m: int, seed: int, label: int,
                     model=None, normalization: str = "as_written", pad: str = DEFAULT_PAD,
                     cap: int = DEFAULT_CAP) -> Attribution:
    if method == "exact":
        return exact_shapley(x, clf, label, pad, cap=cap)
    if method == "svs":
        return svs(x, clf, label, m, seed, pad)
    if method == "ks":
        return kernelshap(x, clf, label, m, seed, pad)
    if method in ("amortized", "adapt"):
        from .amortized import local_adapt, predict_amortized

        if model is None:
            raise ContractViolation(f"method {method!r} needs a trained model")
        if method == "amortized":
            return predict_amortized(model, x, label, clf.value_mode)
        return local_adapt(model, x, clf, label, m, seed, normalization, pad)
    raise ContractViolation(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class ExplainConfig:
    method: str
    m: int = 0
    master_seed: int = 0
    label: str | int = "pred"
    pad: str = DEFAULT_PAD
    cap: int = DEFAULT_CAP
    normalization: str = "as_written"
    model_digest: str | None = None
    extra: dict = field(default_factory=dict)

    def budget(self) -> int:
        return 0 if self.method in ("exact", "amortized") else int(self.m)


@dataclass
class ExplainResult:
    attributions: list
    errors: dict
    manifest: RunManifest

    @property
    def ok(self) -> bool:
        return not self.errors


def explain_dataset(seqs: Sequence[TokenSequence], clf: ClassifierHandle, config: ExplainConfig,
                    model=None, workers: int = 1) -> ExplainResult:
    """Explain every instance; output order and content are independent of ``workers``."""
    if config.method not in METHODS:
        raise ContractViolation(f"unknown method {config.method!r}")
    if config.method in ("svs", "ks", "adapt") and config.m < 1:
        raise ContractViolation(f"method {config.method!r} needs --samples >= 1")
    if config.method in ("amortized", "adapt") and model is None:
        raise ContractViolation(f"method {config.method!r} needs --model")
    seeds = {x.id: derive_seed(config.master_seed, x.id, config.method) for x in seqs}

    def one(x):
        try:
            y = resolve_label(x, clf, config.label)
            return explain_instance(x, clf, config.method, config.budget(), seeds[x.id], y, model=model,
                                    normalization=config.normalization, pad=config.pad, cap=config.cap), None
        except Exception as exc:  # noqa: BLE001 - reported per instance
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seqs))
    else:
        results = [one(x) for x in seqs]
    attrs, errors = [], {}
    for x, (attr, err) in zip(seqs, results):
        if err is None:
            attrs.append(attr)
        else:
            log.error("instance %s failed: %s", x.id, err)
            errors[x.id] = err
    options = {"cap": config.cap}
    if config.method == "adapt":
        options["normalization"] = config.normalization
    if config.model_digest:
        options["model"] = config.model_digest
    options.update(config.extra)
    manifest = RunManifest(
        master_seed=int(config.master_seed), method=config.method, budget=config.budget(),
        classifier=clf.descriptor, value_mode=clf.value_mode, pad=config.pad, label=str(config.label),
        options=options, seeds={k: str(v) for k, v in seeds.items()},
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), workers=workers,
    )
    return ExplainResult(attrs, errors, manifest)


def attribution_line(attr: Attribution, manifest_hash: str) -> str:
    rec = attr.to_record()
    rec["manifest"] = manifest_hash
    # json float repr is the shortest round-trip representation
    return json.dumps(rec, separators=(",", ":"))


def write_attributions(path, result: ExplainResult) -> Path:
    """Write attribution JSONL plus ``<path>.manifest.json``; returns the manifest path."""
    path = Path(path)
    digest = result.manifest.digest()
    with open(path, "w") as f:
        for attr in result.attributions:
            f.write(attribution_line(attr, digest) + "\n")
    mpath = manifest_path_for(path)
    mpath.write_text(json.dumps(result.manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    return mpath


def manifest_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def read_attributions(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def verify_run(attr_path, manifest_path=None) -> list[str]:
    """Re-derive seeds and check manifest hashes; returns a list of problems (empty if clean)."""
    manifest_path = Path(manifest_path) if manifest_path else manifest_path_for(attr_path)
    raw = json.loads(Path(manifest_path).read_text())
    manifest = RunManifest.from_dict(raw)
    problems = []
    digest = manifest.digest()
    if raw.get("manifest_hash") != digest:
        problems.append(f"manifest hash mismatch: recorded {raw.get('manifest_hash')}, recomputed {digest}")
    for iid, s in manifest.seeds.items():
        if int(s) != manifest.expected_seed(iid):
            problems.append(f"{iid}: manifest seed {s} does not re-derive")
    for rec in read_attributions(attr_path):
        if rec.get("manifest") != digest:
            problems.append(f"{rec['id']}: line carries manifest {rec.get('manifest')}, expected {digest}")
        if manifest.method in ("svs", "ks", "adapt") and int(rec["seed"]) != manifest.expected_seed(rec["id"]):
            problems.append(f"{rec['id']}: seed {rec['seed']} does not re-derive")
    return problems
