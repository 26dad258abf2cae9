"""When every device holds one class, plain FedSKETCH drifts and GATE does not.

FedSKETCHGATE keeps a per-device correction that tracks the gap between the
global and the local update direction. Run with
``python3 demos/04_heterogeneity.py``.
"""

import numpy as np

from fedsketch import CompressorSpec, FedConfig, LogisticProblem, make_logistic, partition_heterogeneous, run

finals = {"fedsketch": [], "fedsketchgate": []}
for seed in range(3):
    data = make_logistic(20, 2000, 4, seed=seed, separation=2.0)
    partition = partition_heterogeneous(data, p=8, classes_per_device=1, seed=seed)
    problem = LogisticProblem(data, reg=1e-3)
    for algorithm in finals:
        config = FedConfig(p=8, k=8, R=100, tau=5, eta=0.5, b=16, algorithm=algorithm, variant="heaprix",
                           sketch=CompressorSpec("heaprix", m=40, t=5, heavy_budget=10), master_seed=seed)
        traces = run(config, problem, partition)
        finals[algorithm].append(traces[-1].loss)
        print(f"seed {seed} {algorithm:14s} loss {traces[-1].loss:.4f} accuracy {traces[-1].accuracy:.3f}")

for algorithm, losses in finals.items():
    print(f"median final loss {algorithm:14s} {np.median(losses):.4f}")
