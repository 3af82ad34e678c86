"""
How the regularizer weight changes the picture
==============================================

With the base loss averaged over mined units, lambda = 10 lets the
regularizer dominate: class spreads grow until training retrieval drops
to chance, while test retrieval still beats an over-fitted plain model.
Smaller weights trade the two off. This sweep makes that visible.
"""

import sys

import numpy as np

from dmlda.data import SynthConfig, synthesize
from dmlda.evaluation import density_report, recall_at_k
from dmlda.training import TrainConfig, train

loss = sys.argv[1] if len(sys.argv) > 1 else "contrastive"
iterations = int(sys.argv[2]) if len(sys.argv) > 2 else 1000
seeds = (0, 1)

train_sets = [synthesize(SynthConfig(seed=s)) for s in seeds]

# %%
print(f"{loss}, {iterations} iterations, seeds {seeds}")
print(f"{'lambda':>7} {'train R@1':>10} {'test R@1':>9} {'density':>8}")
for lam in (0.0, 0.3, 1.0, 3.0, 10.0):
    rows = []
    for seed, (tr, te) in zip(seeds, train_sets):
        state, _ = train(TrainConfig(loss=loss, lam=lam, iterations=iterations, seed=seed), tr)
        etr, ete = state.net.embed(tr.features), state.net.embed(te.features)
        rows.append((recall_at_k(etr, tr.labels, [1])[1], recall_at_k(ete, te.labels, [1])[1],
                     np.mean(list(density_report(etr, tr.labels).values()))))
    a, b, c = np.mean(rows, axis=0)
    print(f"{lam:7.1f} {a:10.3f} {b:9.3f} {c:8.3f}")
