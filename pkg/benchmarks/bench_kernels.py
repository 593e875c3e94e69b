"""Time each kernel under the compiled and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeats 20] [--json out.json]

Also times a full exact / SVS-25 / KS-200 pass over a small toy dataset with
each backend, since the end-to-end numbers are what users actually see.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from amortshap import kernels
from amortshap.exact import shapley_coefficients


def kernel_cases(rng):
    L = 12
    masks = rng.integers(0, 2, size=(4096, L)).astype(np.uint8)
    keys = kernels.backends()["python"].mask_keys(masks)
    perms = np.argsort(rng.random((200, 32)), axis=1).astype(np.int64)
    vals = rng.normal(size=(200, 33))
    exact_vals = rng.normal(size=1 << L)
    coef = shapley_coefficients(L)
    w, b = rng.normal(size=(L, 2)), rng.normal(size=2)
    return {
        "mask_keys": lambda k: k.mask_keys(masks),
        "keys_to_masks": lambda k: k.keys_to_masks(keys, L),
        "prefix_keys": lambda k: k.prefix_keys(perms),
        "prefix_masks": lambda k: k.prefix_masks(perms),
        "svs_accumulate": lambda k: k.svs_accumulate(np.zeros(32), perms, vals),
        "exact_accumulate": lambda k: k.exact_accumulate(exact_vals, L, coef),
        "gray_code": lambda k: k.gray_code(L),
        "popcount": lambda k: k.popcount(keys),
        "masked_sum": lambda k: k.masked_sum(masks, w, b),
    }


END_TO_END = """
import json, time
from amortshap import kernels, exact_shapley, svs, kernelshap
from amortshap.toygen import ToySpec, generate_dataset
t = generate_dataset(ToySpec(n=40, lengths=(10,), seed=3)); c = t.classifier
out = {"backend": kernels.BACKEND}
for name, f in (("exact", lambda x: exact_shapley(x, c, 1)),
                ("svs-25", lambda x: svs(x, c, 1, 25, 0)),
                ("ks-200", lambda x: kernelshap(x, c, 1, 200, 0))):
    t0 = time.perf_counter()
    for x in t.seqs:
        f(x)
    out[name] = (time.perf_counter() - t0) / len(t.seqs)
print(json.dumps(out))
"""


def end_to_end(pure):
    env = {**os.environ, "AMORTSHAP_PURE_PYTHON": "1" if pure else "0"}
    res = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--json")
    args = p.parse_args(argv)

    backends = kernels.backends()
    cases = kernel_cases(np.random.default_rng(0))
    rows = []
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        t = {b: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeats)) for b, mod in backends.items()}
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        rows.append({"kernel": name, **{f"{b}_s": v for b, v in t.items()}, "speedup": speed})
        print(f"{name:<18}" + "".join(f"{v * 1e6:>12.1f}us" for v in t.values()) + f"{speed:>9.1f}x")

    e2e = [end_to_end(pure=True)]
    if "cython" in backends:
        e2e.append(end_to_end(pure=False))
    print("\nper-instance seconds, L=10")
    for r in e2e:
        print(f"  {r['backend']:<8} exact {r['exact']:.5f}  svs-25 {r['svs-25']:.5f}  ks-200 {r['ks-200']:.5f}")

    if args.json:
        with open(args.json, "w") as f:
            json.dump({"kernels": rows, "end_to_end": e2e}, f, indent=2)


if __name__ == "__main__":
    main()
