"""
Three metric-learning losses on a toy batch
===========================================

Embeddings live on the unit sphere, so squared distances lie in [0, 4].
We build a tiny batch by hand, mine the units each loss needs, and look at
values and gradients.
"""

import numpy as np

from dmlda.linalg import l2_normalize_rows
from dmlda.losses import contrastive_loss, npair_loss, triplet_loss
from dmlda.sampler import mine_pairs, mine_triplets, mine_tuplets

rng = np.random.default_rng(0)

# %%
# Two classes, three points each, slightly jittered around two directions.
centres = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
labels = np.repeat([0, 1], 3)
emb, _ = l2_normalize_rows(centres[labels] + 0.3 * rng.standard_normal((6, 3)))
print("embeddings\n", emb.round(3))

# %%
# Contrastive: every unordered pair. Positives pay their squared distance,
# negatives pay only when they come closer than the margin.
pairs = mine_pairs(labels)
out = contrastive_loss(emb, pairs, margin=1.0)
print(f"{len(pairs.positives)} positive / {len(pairs.negatives)} negative pairs, loss {out.value:.4f}")

# %%
# Triplet: anchor, positive, negative. Zero once the negative is at least
# ``margin`` further away than the positive, which every triplet in this
# well-separated batch already is.
triplets = mine_triplets(labels, per_anchor=2, rng=rng)
out = triplet_loss(emb, triplets, margin=1.0)
print(f"{len(triplets)} triplets, loss {out.value:.4f}")

# %%
# N-pair: one positive and one negative from each other class per anchor,
# scored with inner products inside a softmax-style log-sum-exp.
tuplets = mine_tuplets(labels, rng)
out = npair_loss(emb, tuplets)
print(f"{len(tuplets)} tuplets, loss {out.value:.4f}")

# %%
# Gradients are returned with respect to the embeddings. Moving against
# them lowers the loss; here a single small step on the raw rows.
step = emb - 0.05 * out.d_embeddings
step, _ = l2_normalize_rows(step)
print("N-pair loss after one step:", round(npair_loss(step, tuplets).value, 4))
