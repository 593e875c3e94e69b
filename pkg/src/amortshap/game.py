"""The per-instance coalition game v(s) = M(x_s)_y with an evaluation cache."""

from __future__ import annotations

import numpy as np

from . import kernels
from .classifier import ClassifierHandle
from .core import DEFAULT_PAD, ContractViolation, TokenSequence


class Game:
    """Cached value function for one (instance, classifier, label).

    Masked inputs are keyed by their mask. Since no token of ``x`` equals the
    pad token, distinct masks give distinct token lists, so this is the same
    cache as one keyed by the exact token list. ``n_evals`` counts distinct
    classifier evaluations.
    """

    # up to this many positions the cache is a dense array indexed by mask key
    DENSE_MAX_BITS = 16

    def __init__(self, x: TokenSequence, clf: ClassifierHandle, label: int,
                 pad: str = DEFAULT_PAD, batch_size: int = 4096):
        x.check_pad(pad)
        clf._check_label(label)
        self.x = x
        self.clf = clf
        self.label = int(label)
        self.pad = pad
        self.L = x.L
        self.batch_size = batch_size
        self._cache: dict = {}
        self._int_keys = self.L <= kernels.MAX_KEY_BITS
        self._dense = None
        self._known = None
        self._n_dense = 0
        if self.L <= self.DENSE_MAX_BITS:
            self._dense = np.zeros(1 << self.L, dtype=np.float64)
            self._known = np.zeros(1 << self.L, dtype=bool)

    @property
    def n_evals(self) -> int:
        return self._n_dense if self._dense is not None else len(self._cache)

    def keys(self, masks: np.ndarray):
        masks = np.ascontiguousarray(masks, dtype=np.uint8)
        if self._int_keys:
            return kernels.mask_keys(masks)
        return [row.tobytes() for row in masks]

    def _evaluate(self, masks: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, len(masks), self.batch_size):
            chunk = masks[start:start + self.batch_size]
            out.append(self.clf.predict_masked(self.x.tokens, chunk, self.pad)[:, self.label])
        return np.concatenate(out) if out else np.zeros(0)

    def values(self, masks: np.ndarray) -> np.ndarray:
        masks = np.ascontiguousarray(masks, dtype=np.uint8)
        if masks.ndim != 2 or masks.shape[1] != self.L:
            raise ContractViolation(f"mask matrix shape {masks.shape} does not match L={self.L}")
        if not len(masks):
            return np.zeros(0)
        if self._int_keys:
            return self.values_for_keys(kernels.mask_keys(masks))
        keys = self.keys(masks)
        missing, seen = [], set()
        for r, k in enumerate(keys):
            if k not in self._cache and k not in seen:
                seen.add(k)
                missing.append(r)
        if missing:
            vals = self._evaluate(masks[missing])
            for r, v in zip(missing, vals):
                self._cache[keys[r]] = float(v)
        return np.array([self._cache[k] for k in keys], dtype=np.float64)

    def values_for_keys(self, keys: np.ndarray) -> np.ndarray:
        """Values for integer mask keys (requires L <= MAX_KEY_BITS); any array shape."""
        if not self._int_keys:
            raise ContractViolation(f"integer mask keys unavailable for L={self.L}")
        keys = np.asarray(keys, dtype=np.int64)
        if self._dense is not None:
            return self._dense_lookup(keys)
        uniq, first, inverse = np.unique(keys.ravel(), return_index=True, return_inverse=True)
        cache = self._cache
        # evaluate in order of first appearance so callers control the query order
        missing = [k for _, k in sorted(zip(first.tolist(), uniq.tolist())) if k not in cache]
        if missing:
            vals = self._evaluate(kernels.keys_to_masks(np.asarray(missing, dtype=np.int64), self.L))
            for k, v in zip(missing, vals.tolist()):
                cache[k] = v
        uvals = np.array([cache[k] for k in uniq.tolist()], dtype=np.float64)
        return uvals[inverse].reshape(keys.shape)

    def _dense_lookup(self, keys: np.ndarray) -> np.ndarray:
        flat = keys.ravel()
        todo = flat[~self._known[flat]]
        if len(todo):
            uniq, first = np.unique(todo, return_index=True)
            missing = uniq[np.argsort(first, kind="stable")]
            self._dense[missing] = self._evaluate(kernels.keys_to_masks(missing, self.L))
            self._known[missing] = True
            self._n_dense += len(missing)
        return self._dense[keys]

    def v_empty(self) -> float:
        return float(self.values(np.zeros((1, self.L), dtype=np.uint8))[0])

    def v_full(self) -> float:
        return float(self.values(np.ones((1, self.L), dtype=np.uint8))[0])
