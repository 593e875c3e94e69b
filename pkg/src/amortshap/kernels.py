"""Kernel backend selection.

The compiled Cython module is used when importable; otherwise the numpy
reference in ``_pykernels`` is used. Set ``AMORTSHAP_PURE_PYTHON=1`` to force
the fallback. Both backends return bit-identical results.
"""

import os

from . import _pykernels

NAMES = (
    "mask_keys",
    "keys_to_masks",
    "prefix_keys",
    "prefix_masks",
    "svs_accumulate",
    "exact_accumulate",
    "gray_code",
    "popcount",
    "masked_sum",
)
MAX_KEY_BITS = _pykernels.MAX_KEY_BITS

_compiled = None
if os.environ.get("AMORTSHAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

mask_keys = _impl.mask_keys
keys_to_masks = _impl.keys_to_masks
prefix_keys = _impl.prefix_keys
prefix_masks = _impl.prefix_masks
svs_accumulate = _impl.svs_accumulate
exact_accumulate = _impl.exact_accumulate
gray_code = _impl.gray_code
popcount = _impl.popcount
masked_sum = _impl.masked_sum


def backends():
    """Map backend name to module, for benchmarks and cross-checks."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
