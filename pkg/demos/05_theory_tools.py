"""Compression factor, step-size check and privacy level in a few calls.

Run with ``python3 demos/05_theory_tools.py``.
"""

from fedsketch import omega_for, privacy_epsilon, sketch_rows, stepsize_ok
from fedsketch.analysis import max_stable_eta

d, m = 10_000, 500
for variant in ("privix", "heaprix"):
    print(f"omega({variant}) = {omega_for(variant, m, d):.2f}")

# rows needed to keep all d coordinates accurate over R rounds with 1% failure
print("rows for d=1e4, R=100, delta=0.01:", sketch_rows(d, 100, 0.01))

omega, L, tau, k, gamma = omega_for("heaprix", m, d), 10.0, 5, 10, 1.0
limit = max_stable_eta(gamma, tau, L, omega, k)
print(f"largest stable eta: {limit:.4g}")
for eta in (0.5 * limit, limit, 2 * limit):
    print(f"  eta = {eta:.4g} ok = {stepsize_ok(eta, gamma, tau, L, omega, k)}")

# privacy of a t x m sketch of a length-l input with entries ~ N(0, sigma^2), |entry| <= C
for t, m in ((1, 2), (5, 2), (1, 10), (1, 40)):
    eps = privacy_epsilon(t, m, l=1000, sigma=10.0, C=1.0, alpha=4.0)
    print(f"  t = {t}, m = {m:2d}: epsilon = {'infeasible' if eps is None else f'{eps:.3g}'}")
