"""
PMF quantization and the range coder
====================================

Model pmfs are turned into integer frequencies summing to 65536 (each at
least 1, so nothing is ever impossible), then coded with a byte-oriented
range coder. The coded size lands within a few bytes of the ideal
cross-entropy.
"""

import time

import numpy as np

from snoc.coder import TOTAL, decode_symbols, encode_symbols, ideal_codelength, quantize_pmf, quantize_pmfs

print("uniform:", quantize_pmf(np.full(16, 1 / 16)).tolist())
peaked = np.zeros(16)
peaked[5] = 1.0
print("one-hot:", quantize_pmf(peaked).tolist())

rng = np.random.default_rng(0)
for sharpness in (0.05, 0.5, 5.0):
    p = rng.dirichlet(np.full(16, sharpness), size=50_000)
    f = quantize_pmfs(p)
    sym = (np.cumsum(f, axis=1) > rng.integers(0, TOTAL, size=(len(f), 1))).argmax(axis=1)
    t0 = time.perf_counter()
    data = encode_symbols(sym, f)
    t1 = time.perf_counter()
    ok = np.array_equal(decode_symbols(data, f), sym)
    t2 = time.perf_counter()
    ideal = ideal_codelength(sym, f)
    print(
        f"dirichlet({sharpness}): {8 * len(data)} bits vs ideal {ideal:.0f} "
        f"(+{8 * len(data) - ideal:.1f}), lossless={ok}, encode {t1 - t0:.2f} s, decode {t2 - t1:.2f} s"
    )
