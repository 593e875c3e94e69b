"""Amortized explainer: a trained surrogate that predicts per-token scores in one pass.

Each token is hashed into one of V embedding buckets; the (optionally
context-averaged) embedding plus a label embedding goes through
``tanh(z W1 + b1) . w2 + b2``. Training minimizes the mean squared error
against precomputed reference scores with Adam and keeps the checkpoint
with the best validation error.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, Attribution, ContractViolation, NumericalError, TokenSequence, derive_seed, rng_for, stable_hash
from .game import Game
from .stability import spearman_flagged
from .svs import sample_permutations, walk_permutations

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "amortshap-amortized"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("E", "Lab", "W1", "b1", "w2", "b2")


@dataclass
class AmortizedConfig:
    vocab_buckets: int = 2 ** 16
    dim: int = 64
    hidden: int = 64
    lr: float = 5e-5
    epochs: int = 10
    patience: int = 3
    batch_size: int = 32
    seed: int = 0
    context_radius: int = 0
    init_scale: float = 0.1
    hash_salt: str = "amortshap"
    train_fraction: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


# --------------------------------------------------------------------- model

class AmortizedModel:
    def __init__(self, config: AmortizedConfig, num_classes: int, params: dict | None = None):
        self.config = config
        self.num_classes = int(num_classes)
        self._bucket_cache: dict[str, int] = {}
        if params is None:
            params = self._init_params()
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}

    def _init_params(self) -> dict:
        c = self.config
        rng = rng_for(derive_seed(c.seed, "amortized", "init", 0))
        return {
            "E": rng.normal(0.0, c.init_scale, size=(c.vocab_buckets, c.dim)),
            "Lab": rng.normal(0.0, c.init_scale, size=(self.num_classes, c.dim)),
            "W1": rng.normal(0.0, 1.0 / math.sqrt(c.dim), size=(c.dim, c.hidden)),
            "b1": np.zeros(c.hidden),
            "w2": rng.normal(0.0, 1.0 / math.sqrt(c.hidden), size=c.hidden) * 0.1,
            "b2": np.zeros(1),
        }

    @classmethod
    def zeros(cls, config: AmortizedConfig | None = None, num_classes: int = 2) -> "AmortizedModel":
        """A model whose output is identically +0.0 (recovers plain SVS under adaptation)."""
        model = cls(config or AmortizedConfig(vocab_buckets=16, dim=4, hidden=4), num_classes)
        model.params["w2"][:] = 0.0
        model.params["b2"][:] = 0.0
        return model

    def bucket(self, token: str) -> int:
        b = self._bucket_cache.get(token)
        if b is None:
            digest = hashlib.blake2b((self.config.hash_salt + "\x00" + token).encode(), digest_size=8).digest()
            b = int.from_bytes(digest, "little") % self.config.vocab_buckets
            self._bucket_cache[token] = b
        return b

    def buckets(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.bucket(t) for t in tokens), dtype=np.int64, count=len(tokens))

    def _context_matrix(self, L: int) -> np.ndarray:
        r = self.config.context_radius
        A = np.zeros((L, L))
        for i in range(L):
            lo, hi = max(0, i - r), min(L, i + r + 1)
            A[i, lo:hi] = 1.0 / (hi - lo)
        return A

    def _embed(self, idx: np.ndarray, lengths: Sequence[int]) -> np.ndarray:
        e = self.params["E"][idx]
        if self.config.context_radius <= 0:
            return e
        out, start = np.empty_like(e), 0
        for L in lengths:
            out[start:start + L] = self._context_matrix(L) @ e[start:start + L]
            start += L
        return out

    def _forward(self, idx, labels, lengths):
        p = self.params
        z = self._embed(idx, lengths) + p["Lab"][labels]
        h = np.tanh(z @ p["W1"] + p["b1"])
        out = h @ p["w2"] + p["b2"][0]
        return out, (z, h)

    def predict(self, tokens: Sequence[str] | TokenSequence, label: int) -> np.ndarray:
        toks = tokens.tokens if isinstance(tokens, TokenSequence) else tuple(tokens)
        if not 0 <= label < self.num_classes:
            raise ContractViolation(f"label {label} out of range for {self.num_classes} classes")
        p = self.params
        z = self._embed(self.buckets(toks), (len(toks),)) + p["Lab"][label]
        return np.tanh(z @ p["W1"] + p["b1"]) @ p["w2"] + p["b2"][0]

    # ---------------------------------------------------------- checkpoints

    def save(self, path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "num_classes": self.num_classes,
            "config": asdict(self.config),
        }
        buf = io.BytesIO()
        np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **{k: self.params[k] for k in PARAM_NAMES})
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "AmortizedModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(data["meta"].tobytes().decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ContractViolation(f"{path} is not an amortized checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ContractViolation(f"unsupported checkpoint version {meta.get('version')}")
            params = {k: data[k].copy() for k in PARAM_NAMES}
        return cls(AmortizedConfig(**meta["config"]), meta["num_classes"], params)


# ----------------------------------------------------------- reference data

@dataclass
class RefRecord:
    x: TokenSequence
    label: int
    scores: np.ndarray
    provenance: dict

    def to_json(self) -> dict:
        return {
            "id": self.x.id,
            "tokens": list(self.x.tokens),
            "label": self.label,
            "scores": [float(s) for s in self.scores],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RefRecord":
        x = TokenSequence(d["id"], tuple(d["tokens"]))
        scores = np.asarray(d["scores"], dtype=np.float64)
        if len(scores) != x.L:
            raise ContractViolation(f"record {x.id!r}: {len(scores)} scores for {x.L} tokens")
        return cls(x, int(d["label"]), scores, d.get("provenance", {}))


@dataclass
class ReferenceDataset:
    records: list[RefRecord]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write(self, path) -> None:
        with open(path, "w") as f:
            for r in self.records:
                f.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def read(cls, path) -> "ReferenceDataset":
        with open(path) as f:
            return cls([RefRecord.from_json(json.loads(line)) for line in f if line.strip()])


def build_reference_dataset(dataset: Sequence[TokenSequence], clf: ClassifierHandle, method: str = "svs",
                            m: int = 25, master_seed: int = 0, pad: str = DEFAULT_PAD) -> ReferenceDataset:
    """Reference scores at the predicted label; SVS-25 by default."""
    from .runner import explain_instance

    records, skipped = [], []
    for x in dataset:
        try:
            y = clf.predicted_label(x)
            seed = derive_seed(master_seed, x.id, method)
            attr = explain_instance(x, clf, method, m, seed, y, pad=pad)
        except Exception as exc:  # noqa: BLE001 - recorded and skipped
            log.warning("skipping %s: %s", x.id, exc)
            skipped.append((x.id, str(exc)))
            continue
        prov = {"method": method, "m": m, "seed": seed, "classifier": clf.descriptor}
        records.append(RefRecord(x, y, attr.phi, prov))
    return ReferenceDataset(records, skipped)


# ------------------------------------------------------------------ training

def split_of(record_id: str, salt: str) -> str:
    b = stable_hash(salt, "split", record_id) % 10
    return "train" if b < 8 else ("valid" if b == 8 else "test")


def split_records(refs: ReferenceDataset, config: AmortizedConfig) -> dict[str, list[RefRecord]]:
    parts = {"train": [], "valid": [], "test": []}
    for r in refs.records:
        parts[split_of(r.x.id, config.hash_salt)].append(r)
    if config.train_fraction < 1.0:
        keep = int(round(config.train_fraction * 10_000))
        parts["train"] = [r for r in parts["train"]
                          if stable_hash(config.hash_salt, "fraction", config.seed, r.x.id) % 10_000 < keep]
    for name, recs in parts.items():
        if not recs:
            raise ContractViolation(f"empty {name} split ({len(refs)} records)")
    return parts


@dataclass
class _Batch:
    idx: np.ndarray
    labels: np.ndarray
    target: np.ndarray
    lengths: list


def _pack(model: AmortizedModel, recs: Sequence[RefRecord]) -> _Batch:
    idx = np.concatenate([model.buckets(r.x.tokens) for r in recs])
    labels = np.concatenate([np.full(r.x.L, r.label, dtype=np.int64) for r in recs])
    target = np.concatenate([r.scores for r in recs])
    return _Batch(idx, labels, target, [r.x.L for r in recs])


def _mse(model: AmortizedModel, batch: _Batch) -> float:
    out, _ = model._forward(batch.idx, batch.labels, batch.lengths)
    return float(np.mean((out - batch.target) ** 2))


def mean_spearman(model: AmortizedModel, recs: Sequence[RefRecord]) -> float:
    vals = []
    for r in recs:
        if r.x.L < 2:
            continue
        rho, degenerate = spearman_flagged(model.predict(r.x.tokens, r.label), r.scores)
        if not degenerate:
            vals.append(rho)
    return float(np.mean(vals)) if vals else float("nan")


def collision_rate(model: AmortizedModel, recs: Sequence[RefRecord]) -> float:
    vocab = sorted({t for r in recs for t in r.x.tokens})
    if not vocab:
        return 0.0
    counts: dict[int, int] = {}
    for t in vocab:
        b = model.bucket(t)
        counts[b] = counts.get(b, 0) + 1
    return sum(1 for t in vocab if counts[model.bucket(t)] > 1) / len(vocab)


class _Adam:
    """Adam; the embedding table uses lazy row-wise updates (only rows seen in the batch)."""

    def __init__(self, params: dict, c: AmortizedConfig):
        self.c = c
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, rows: np.ndarray):
        c = self.c
        self.t += 1
        corr1 = 1.0 - c.beta1 ** self.t
        corr2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            if k == "E":
                m, v = self.m[k][rows], self.v[k][rows]
                m = c.beta1 * m + (1 - c.beta1) * g
                v = c.beta2 * v + (1 - c.beta2) * g * g
                self.m[k][rows], self.v[k][rows] = m, v
                params[k][rows] -= c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)
            else:
                m = self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
                v = self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
                params[k] -= c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)


def _grads(model: AmortizedModel, batch: _Batch):
    p = model.params
    out, (z, h) = model._forward(batch.idx, batch.labels, batch.lengths)
    resid = out - batch.target
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite losses are reported by the caller
        loss = float(np.mean(resid ** 2))
    g_out = 2.0 * resid / len(resid)
    g_a = (g_out[:, None] * p["w2"][None, :]) * (1.0 - h * h)
    g_z = g_a @ p["W1"].T
    g_lab = np.zeros_like(p["Lab"])
    np.add.at(g_lab, batch.labels, g_z)
    if model.config.context_radius > 0:
        g_e, start = np.empty_like(g_z), 0
        for L in batch.lengths:
            g_e[start:start + L] = model._context_matrix(L).T @ g_z[start:start + L]
            start += L
    else:
        g_e = g_z
    rows, inverse = np.unique(batch.idx, return_inverse=True)
    g_rows = np.zeros((len(rows), g_e.shape[1]))
    np.add.at(g_rows, inverse, g_e)
    grads = {
        "E": g_rows,
        "Lab": g_lab,
        "W1": z.T @ g_a,
        "b1": g_a.sum(axis=0),
        "w2": h.T @ g_out,
        "b2": np.array([g_out.sum()]),
    }
    return loss, grads, rows


@dataclass
class TrainReport:
    train_mse: float
    valid_mse: float
    test_mse: float
    test_spearman: float
    best_epoch: int
    collision_rate: float
    n_train: int
    n_valid: int
    n_test: int
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def train_amortized(refs: ReferenceDataset, config: AmortizedConfig | None = None,
                    num_classes: int | None = None) -> tuple[AmortizedModel, TrainReport]:
    config = config or AmortizedConfig()
    if len(refs) < 2:
        raise ContractViolation("need at least 2 reference records")
    parts = split_records(refs, config)
    if num_classes is None:
        num_classes = max(r.label for r in refs.records) + 1
    model = AmortizedModel(config, num_classes)
    valid, train_all = _pack(model, parts["valid"]), _pack(model, parts["train"])
    opt = _Adam(model.params, config)
    best = (math.inf, {k: v.copy() for k, v in model.params.items()}, 0)
    history, bad_epochs = [], 0
    train_recs = parts["train"]
    for epoch in range(1, config.epochs + 1):
        order = sorted(train_recs, key=lambda r: stable_hash(config.hash_salt, config.seed, epoch, r.x.id))
        for start in range(0, len(order), config.batch_size):
            batch = _pack(model, order[start:start + config.batch_size])
            loss, grads, rows = _grads(model, batch)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}")
            opt.step(model.params, grads, rows)
        train_mse, valid_mse = _mse(model, train_all), _mse(model, valid)
        if not (math.isfinite(train_mse) and math.isfinite(valid_mse)):
            raise NumericalError(f"non-finite MSE after epoch {epoch}: train={train_mse} valid={valid_mse}")
        improved = valid_mse < best[0]
        history.append({"epoch": epoch, "train_mse": train_mse, "valid_mse": valid_mse, "selected": improved})
        log.info("epoch %d train %.3e valid %.3e%s", epoch, train_mse, valid_mse, " *" if improved else "")
        if improved:
            best, bad_epochs = (valid_mse, {k: v.copy() for k, v in model.params.items()}, epoch), 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.params = best[1]
    test = parts["test"]
    report = TrainReport(
        train_mse=_mse(model, train_all),
        valid_mse=best[0],
        test_mse=_mse(model, _pack(model, test)),
        test_spearman=mean_spearman(model, test),
        best_epoch=best[2],
        collision_rate=collision_rate(model, train_recs),
        n_train=len(train_recs),
        n_valid=len(parts["valid"]),
        n_test=len(test),
        history=history,
    )
    return model, report


# ----------------------------------------------------------------- inference

def predict_amortized(model: AmortizedModel, x: TokenSequence, y: int,
                      value_mode: str = "probability") -> Attribution:
    scores = model.predict(x.tokens, y)
    return Attribution(x.id, int(y), tuple(scores.tolist()), "amortized", 0, 0, value_mode)


def local_adapt(model: AmortizedModel | None, x: TokenSequence, clf: ClassifierHandle, y: int, m: int,
                seed: int, normalization: str = "as_written", pad: str = DEFAULT_PAD,
                game: Game | None = None) -> Attribution:
    """Initialize with the surrogate's scores, add m permutation walks, then normalize.

    ``as_written`` divides by m, so the initialization carries weight 1/m;
    ``virtual_sample`` divides by m + 1, treating it as one extra sample.
    ``model=None`` initializes with zeros.
    """
    if m < 1:
        raise ContractViolation(f"local adaptation needs m >= 1, got {m}")
    if normalization not in ("as_written", "virtual_sample"):
        raise ContractViolation(f"unknown normalization {normalization!r}")
    game = game or Game(x, clf, y, pad)
    phi0 = np.zeros(x.L) if model is None else np.asarray(model.predict(x.tokens, y), dtype=np.float64)
    perms = sample_permutations(x.L, seed, x.id, m)
    acc = walk_permutations(game, perms, phi0)
    phi = acc / m if normalization == "as_written" else acc / (m + 1)
    total = game.v_full() - game.v_empty()
    return Attribution(x.id, int(y), tuple(phi.tolist()), "adapt", int(m), int(seed),
                       clf.value_mode, total=total, n_evals=game.n_evals)


def with_config(config: AmortizedConfig, **changes) -> AmortizedConfig:
    return replace(config, **changes)
