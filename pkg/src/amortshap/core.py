"""Domain types shared by every estimator.

Tokens are opaque strings. A coalition is a binary mask over token
positions; masked positions are replaced by a pad token before the
classifier sees them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_PAD = "[PAD]"

METHODS = ("exact", "svs", "ks", "amortized", "adapt")
CONSTRAINED_METHODS = ("exact", "svs", "ks")
VALUE_MODES = ("probability", "raw_score")

_U64 = (1 << 64) - 1


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class BudgetError(RuntimeError):
    """The requested computation exceeds a configured budget."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, non-finite values)."""


@dataclass(frozen=True)
class TokenSequence:
    id: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 1:
            raise ContractViolation(f"instance {self.id!r} has no tokens")

    @property
    def L(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def check_pad(self, pad: str = DEFAULT_PAD) -> "TokenSequence":
        if pad in self.tokens:
            raise ContractViolation(
                f"instance {self.id!r} contains the reserved pad token {pad!r}"
            )
        return self


@dataclass(frozen=True)
class Mask:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ContractViolation(f"mask bits must be 0/1, got {bits}")
        object.__setattr__(self, "bits", bits)

    @property
    def size(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def indices(self) -> frozenset[int]:
        return frozenset(i for i, b in enumerate(self.bits) if b)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.uint8)


@dataclass(frozen=True)
class Permutation:
    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ContractViolation(f"not a permutation of 0..{len(order) - 1}: {order}")
        object.__setattr__(self, "order", order)

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class Attribution:
    instance_id: str
    label: int
    scores: tuple[float, ...]
    method: str
    budget: int = 0
    seed: int = 0
    value_mode: str = "probability"
    # v(full) - v(empty); None when the estimator does not observe it
    total: float | None = field(default=None, compare=False)
    n_evals: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolation(f"unknown method {self.method!r}")
        if self.value_mode not in VALUE_MODES:
            raise ContractViolation(f"unknown value mode {self.value_mode!r}")
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    @property
    def phi(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=np.float64)

    def efficiency_gap(self) -> float:
        if self.total is None:
            raise ContractViolation("attribution does not record v(full) - v(empty)")
        return abs(math.fsum(self.scores) - self.total)

    def to_record(self) -> dict:
        return {
            "id": self.instance_id,
            "label": self.label,
            "method": self.method,
            "m": self.budget,
            "seed": self.seed,
            "scores": list(self.scores),
        }


def apply_mask(x: TokenSequence, s: Mask | Sequence[int], pad: str = DEFAULT_PAD) -> TokenSequence:
    bits = s.bits if isinstance(s, Mask) else tuple(s)
    if len(bits) != x.L:
        raise ContractViolation(f"mask length {len(bits)} != sequence length {x.L}")
    return TokenSequence(x.id, tuple(t if b else pad for t, b in zip(x.tokens, bits)))


def mask_from_index_set(indices: Iterable[int], L: int) -> Mask:
    idx = set(int(i) for i in indices)
    bad = [i for i in idx if not 0 <= i < L]
    if bad:
        raise ContractViolation(f"indices {sorted(bad)} out of range for L={L}")
    return Mask(tuple(1 if i in idx else 0 for i in range(L)))


def derive_seed(master_seed: int, instance_id: str, method: str, sample_index: int = 0) -> int:
    """Mix the inputs into a 64-bit seed with a keyed stable hash.

    Pure function of its arguments, so results never depend on evaluation
    order or worker count.
    """
    payload = json.dumps(
        [int(master_seed) & _U64, str(instance_id), str(method), int(sample_index)],
        separators=(",", ":"),
    ).encode()
    digest = hashlib.blake2b(payload, digest_size=8, person=b"amortshap-seed").digest()
    return int.from_bytes(digest, "little")


def stable_hash(*parts, digest_size: int = 8) -> int:
    payload = json.dumps([str(p) for p in parts], separators=(",", ":")).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=digest_size).digest(), "little")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class RunManifest:
    master_seed: int
    method: str
    budget: int
    classifier: str
    value_mode: str
    pad: str = DEFAULT_PAD
    label: str = "pred"
    options: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timestamp: str = ""
    workers: int = 1

    def identity(self) -> dict:
        # timestamp and workers describe the execution, not the result: not hashed
        return {
            "master_seed": self.master_seed,
            "method": self.method,
            "budget": self.budget,
            "classifier": self.classifier,
            "value_mode": self.value_mode,
            "pad": self.pad,
            "label": self.label,
            "options": self.options,
            "seeds": self.seeds,
        }

    def digest(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        d = self.identity()
        d.update(timestamp=self.timestamp, workers=self.workers, manifest_hash=self.digest())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        kw = {k: v for k, v in d.items() if k not in ("manifest_hash",)}
        return cls(**kw)

    def expected_seed(self, instance_id: str) -> int:
        return derive_seed(self.master_seed, instance_id, self.method)
