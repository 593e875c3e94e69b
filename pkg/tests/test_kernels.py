import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amortshap import _pykernels, kernels
from amortshap.exact import shapley_coefficients

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def _perms(rng, m, L):
    return np.argsort(rng.random((m, L)), axis=1).astype(np.int64)


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 62), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_backends_bit_identical(L, m, seed):
    rng = np.random.default_rng(seed)
    c, p = BACKENDS["cython"], BACKENDS["python"]
    masks = rng.integers(0, 2, size=(m, L)).astype(np.uint8)
    keys = p.mask_keys(masks)
    assert np.array_equal(c.mask_keys(masks), keys)
    assert np.array_equal(c.keys_to_masks(keys, L), p.keys_to_masks(keys, L))
    assert np.array_equal(p.keys_to_masks(keys, L), masks)
    perms = _perms(rng, m, L)
    assert np.array_equal(c.prefix_keys(perms), p.prefix_keys(perms))
    assert np.array_equal(c.prefix_masks(perms), p.prefix_masks(perms))
    vals = rng.normal(size=(m, L + 1))
    phi0 = rng.normal(size=L)
    assert c.svs_accumulate(phi0, perms, vals).tobytes() == p.svs_accumulate(phi0, perms, vals).tobytes()
    assert np.array_equal(c.popcount(keys), p.popcount(keys))
    w, b = rng.normal(size=(L, 3)), rng.normal(size=3)
    assert c.masked_sum(masks, w, b).tobytes() == p.masked_sum(masks, w, b).tobytes()


def test_masked_sum_matches_matmul():
    rng = np.random.default_rng(0)
    masks = rng.integers(0, 2, size=(20, 7)).astype(np.uint8)
    w, b = rng.normal(size=(7, 2)), rng.normal(size=2)
    assert np.allclose(kernels.masked_sum(masks, w, b), masks @ w + b, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("L", [1, 2, 5, 10, 13])
def test_exact_kernels_bit_identical(L):
    c, p = BACKENDS["cython"], BACKENDS["python"]
    vals = np.random.default_rng(L).normal(size=1 << L)
    coef = shapley_coefficients(L)
    assert c.exact_accumulate(vals, L, coef).tobytes() == p.exact_accumulate(vals, L, coef).tobytes()
    assert np.array_equal(c.gray_code(L), p.gray_code(L))


@pytest.mark.parametrize("L", [1, 3, 8])
def test_gray_code_visits_every_mask_once_with_single_bit_steps(L):
    g = _pykernels.gray_code(L)
    assert sorted(g.tolist()) == list(range(1 << L))
    steps = np.bitwise_xor(g[1:], g[:-1])
    assert all(bin(int(s)).count("1") == 1 for s in steps)


def test_prefix_keys_walk_the_permutation():
    perms = np.array([[2, 0, 1]])
    assert _pykernels.prefix_keys(perms).tolist() == [[0, 4, 5, 7]]


def _run(env_extra):
    code = (
        "import json; from amortshap import kernels, exact_shapley, svs, kernelshap\n"
        "from amortshap.toygen import ToySpec, generate_dataset\n"
        "t = generate_dataset(ToySpec(n=5, lengths=(9,), seed=3)); c = t.classifier\n"
        "out = {'backend': kernels.BACKEND, 'scores': [list(f(x).scores) for x in t.seqs for f in ("
        "lambda x: exact_shapley(x, c, 1), lambda x: svs(x, c, 1, 13, 2), lambda x: kernelshap(x, c, 1, 40, 2))]}\n"
        "print(json.dumps(out))\n"
    )
    env = {**os.environ, **env_extra}
    return json.loads(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                     check=True).stdout)


def test_fallback_selected_by_environment_and_results_agree():
    pure = _run({"AMORTSHAP_PURE_PYTHON": "1"})
    default = _run({"AMORTSHAP_PURE_PYTHON": "0"})
    assert pure["backend"] == "python"
    assert default["backend"] == kernels.BACKEND
    assert pure["scores"] == default["scores"]
