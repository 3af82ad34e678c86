"""
The density regularizer on frozen embeddings
============================================

The regularizer watches how spread out each class is (its mean squared
distance to the class centroid) and pulls that spread toward a learnable
target ``alpha``. A bonus for large targets keeps classes from collapsing,
and a pairwise penalty keeps the targets in the same proportions as the
classes' spreads in the raw input features.
"""

import numpy as np

from dmlda.density import DensityState, avg_intra_distance, density_regularizer

# %%
# A single class with fixed embeddings. With no other class the pairwise
# penalty is zero and the optimal target sits half a unit above the actual
# density.
e = np.array([[1.0, 0.0], [0.6, 0.8], [-0.6, 0.8]])
D = avg_intra_distance(e).d_avg
state = DensityState([0], [0.5], [1.0])
for _ in range(300):
    state.alphas -= 0.25 * density_regularizer(e, [0, 0, 0], state).d_alpha
print(f"density {D:.4f}, learned target {state.alphas[0]:.4f}, difference {state.alphas[0] - D:.4f}")

# %%
# Two classes whose raw-feature densities differ by a factor of four.
# With eta = 0.5 the penalty prefers targets in a 2:1 ratio.
e2 = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, 0.6]])
labels = [0, 0, 1, 1]
state = DensityState([0, 1], [0.5, 0.5], [400.0, 100.0], eta=0.5)
for it in range(4001):
    out = density_regularizer(e2, labels, state)
    if it % 1000 == 0:
        a0, a1 = state.alphas
        print(f"iter {it:5d}  alphas ({a0:.3f}, {a1:.3f})  ratio {a0 / a1:.3f}  penalty {out.penalty:.2e}")
    state.alphas -= 2e-3 * out.d_alpha
    np.maximum(state.alphas, 0.0, out=state.alphas)

# %%
# With eta = 0 the raw densities no longer matter and the penalty just pulls
# the targets toward each other, against each class's own density term.
state = DensityState([0, 1], [0.9, 0.1], [400.0, 100.0], eta=0.0)
for _ in range(4000):
    state.alphas -= 2e-3 * density_regularizer(e2, labels, state).d_alpha
print("eta = 0 targets:", state.alphas.round(3))
