"""PRIVIX, HEAVYMIX and HEAPRIX read the same sketch in different ways.

PRIVIX is unbiased but noisy. HEAVYMIX keeps a few large coordinates and is
biased. HEAPRIX adds PRIVIX of the leftover to HEAVYMIX for less noise. When
the leftover is sketched with the same hashes that chose the heavy set, a
small bias remains; an independent residual family removes it.
Run with ``python3 demos/02_decoders.py``.
"""

import math

import numpy as np

from fedsketch import CompressorSpec, compress, compressor_stats, derive_family, heaprix_device, heavymix, residual_family

d, m, t, trials = 64, 16, 5, 4000
x = np.random.default_rng(12345).standard_normal(d)

privix = compressor_stats(CompressorSpec("privix", m, t), x, trials, seed=1)
heaprix = compressor_stats(CompressorSpec("heaprix", m, t, heavy_budget=8), x, trials, seed=1)
bound = math.e * d / m * float(x @ x)
print(f"PRIVIX  MSE {privix.mean_squared_error:7.2f}   bias up to {np.abs(privix.mean_error).max():.3f}")
print(f"HEAPRIX MSE {heaprix.mean_squared_error:7.2f}   bias up to {np.abs(heaprix.mean_error).max():.3f}")
print(f"variance bound (e d / m) ||x||^2 = {bound:.1f}")

errors = np.empty((trials, d))
for r in range(trials):
    f = derive_family(1, r, t, m, d)
    errors[r] = heaprix_device(x, f, 8, residual=residual_family(f)).values - x
print(f"HEAPRIX with an independent residual family: MSE {np.mean(np.sum(errors**2, axis=1)):.2f}"
      f"   bias up to {np.abs(errors.mean(axis=0)).max():.3f}")

# more buckets shrink the HEAPRIX error until it vanishes at m = d
for buckets in (8, 16, 32, 64):
    mse = compressor_stats(CompressorSpec("heaprix", buckets, t, heavy_budget=8), x, 500, seed=2).mean_squared_error
    print(f"  m = {buckets:2d}: HEAPRIX MSE {mse:.3g}")

# HEAVYMIX on a power law finds the head of the distribution
x = np.arange(1, 257) ** -1.2
hits = 0
for r in range(200):
    f = derive_family(7, r, 7, 64, 256)
    kept = heavymix(compress(x, f), f, 10, value_source=x).support
    hits += np.isin(np.arange(10), kept).sum() >= 9
print(f"HEAVYMIX found >= 9 of the top 10 in {hits}/200 families")
