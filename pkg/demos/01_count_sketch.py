"""A count sketch squeezes a long vector into a small t x m table.

Run with ``python3 demos/01_count_sketch.py``.
"""

import numpy as np

from fedsketch import compress, derive_family, l2_estimate, point_query, table_add, table_scale
from fedsketch.sketch import point_query_all

d, t, m = 1000, 5, 50
rng = np.random.default_rng(0)

# one hash family per (seed, round); every party that derives it gets the same hashes
family = derive_family(master_seed=42, round=0, t=t, m=m, d=d)
print("family fingerprint:", hex(family.fingerprint))

# a sparse signal on top of small noise
x = 0.01 * rng.standard_normal(d)
x[[3, 141, 592]] = [5.0, -3.0, 2.5]
table = compress(x, family)
print("table shape:", table.values.shape, "versus", d, "floats")

# point queries recover the large entries; the rest read as collision noise
for i in (3, 141, 592, 7):
    print(f"x[{i}] = {x[i]:+.3f}  estimate {point_query(table, family, i):+.3f}")

# the squared norm is estimated from the table alone
print(f"||x||^2 = {x @ x:.3f}  estimate {l2_estimate(table):.3f}")

# the sketch is linear, so averaging tables is the same as sketching the average
y = rng.standard_normal(d)
lhs = compress(0.5 * (x + y), family)
rhs = table_scale(table_add(compress(x, family), compress(y, family)), 0.5)
print("max |compress(mean) - mean(compress)|:", np.abs(lhs.values - rhs.values).max())

# with at least as many buckets as coordinates nothing collides
small = derive_family(42, 0, 3, 32, 32)
z = rng.standard_normal(32)
print("lossless when m >= d:", np.allclose(point_query_all(compress(z, small), small), z))
