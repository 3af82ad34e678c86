"""
Training on the synthetic benchmark and evaluating on unseen classes
====================================================================

Train/test classes are disjoint, so test retrieval measures how well the
learned metric transfers. Pass an iteration count on the command line for
a longer run (the acceptance suite uses 3000).
"""

import sys
import time

import numpy as np

from dmlda.data import SynthConfig, synthesize
from dmlda.evaluation import evaluate, recall_at_k
from dmlda.training import TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 500

# %%
train_ds, test_ds = synthesize(SynthConfig(seed=0))
print(f"train: {len(train_ds)} samples / {len(train_ds.classes)} classes, "
      f"test: {len(test_ds)} samples / {len(test_ds.classes)} classes, dim {train_ds.dim}")
print("R@1 of raw test features:", round(recall_at_k(test_ds.features, test_ds.labels, [1])[1], 3))

# %%
# Contrastive loss without and with the density regularizer.
for lam in (0.0, 10.0):
    start = time.perf_counter()
    cfg = TrainConfig(loss="contrastive", lam=lam, iterations=iterations, seed=0)
    state, records = train(cfg, train_ds)
    tr = evaluate(state.net.embed(train_ds.features), train_ds.labels)
    te = evaluate(state.net.embed(test_ds.features), test_ds.labels)
    print(f"\nlambda = {lam}  ({time.perf_counter() - start:.1f}s)")
    print(f"  train R@1 {tr.recall_at[1]:.3f}  mean density {tr.mean_density:.3f}")
    print(f"  mean target alpha {np.mean(state.density.alphas):.3f}")
    print("  test set:")
    print("  " + te.to_table().rstrip().replace("\n", "\n  "))
