"""Reference kernels in numpy; the compiled module mirrors these exactly.

Every reduction here runs in a fixed sequential order so that the Cython
build produces bit-identical results.
"""

import numpy as np

MAX_KEY_BITS = 62


def mask_keys(masks):
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    n, L = masks.shape
    if L > MAX_KEY_BITS:
        raise ValueError(f"integer keys support L <= {MAX_KEY_BITS}, got {L}")
    weights = np.left_shift(np.int64(1), np.arange(L, dtype=np.int64))
    return masks.astype(np.int64) @ weights


def keys_to_masks(keys, L):
    keys = np.asarray(keys, dtype=np.int64)
    shifts = np.arange(L, dtype=np.int64)
    return ((keys[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def prefix_keys(perms):
    perms = np.asarray(perms, dtype=np.int64)
    m, L = perms.shape
    if L > MAX_KEY_BITS:
        raise ValueError(f"integer keys support L <= {MAX_KEY_BITS}, got {L}")
    out = np.zeros((m, L + 1), dtype=np.int64)
    np.cumsum(np.left_shift(np.int64(1), perms), axis=1, out=out[:, 1:])
    return out


def prefix_masks(perms):
    perms = np.asarray(perms, dtype=np.int64)
    m, L = perms.shape
    ranks = np.empty_like(perms)
    np.put_along_axis(ranks, perms, np.broadcast_to(np.arange(L), (m, L)), axis=1)
    steps = np.arange(L + 1)[None, :, None]
    return (ranks[:, None, :] < steps).astype(np.uint8)


def svs_accumulate(phi, perms, vals):
    """Add every permutation's marginals to ``phi`` in (permutation, step) order."""
    phi = np.array(phi, dtype=np.float64, copy=True)
    perms = np.asarray(perms, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    diffs = vals[:, 1:] - vals[:, :-1]
    np.add.at(phi, perms.ravel(), diffs.ravel())
    return phi


def exact_accumulate(vals, L, coef):
    """phi_i = sum over s without i, ascending s, of coef[|s|] * (v(s+i) - v(s))."""
    vals = np.asarray(vals, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    keys = np.arange(1 << L, dtype=np.int64)
    sizes = popcount(keys)
    phi = np.zeros(L, dtype=np.float64)
    for i in range(L):
        bit = np.int64(1) << i
        s = keys[(keys & bit) == 0]
        contrib = coef[sizes[s]] * (vals[s | bit] - vals[s])
        phi[i] = np.cumsum(contrib)[-1] if contrib.size else 0.0
    return phi


def gray_code(L):
    i = np.arange(1 << L, dtype=np.int64)
    return i ^ (i >> 1)


def popcount(keys):
    keys = np.asarray(keys, dtype=np.int64).copy()
    count = np.zeros(keys.shape, dtype=np.int64)
    while np.any(keys):
        count += keys & 1
        keys >>= 1
    return count


def masked_sum(masks, pos_w, bias):
    """out[r] = bias + sum_i masks[r, i] * pos_w[i], summed over i in ascending order."""
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    pos_w = np.ascontiguousarray(pos_w, dtype=np.float64)
    n, L = masks.shape
    C = pos_w.shape[1]
    acc = np.empty((n, C), dtype=np.float64)
    acc[:] = np.asarray(bias, dtype=np.float64)[None, :]
    tmp = np.empty_like(acc)
    col = np.empty((n, 1), dtype=np.float64)
    for i in range(L):
        np.copyto(col, masks[:, i:i + 1])
        np.multiply(col, pos_w[i][None, :], out=tmp)
        acc += tmp
    return acc
