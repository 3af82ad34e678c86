"""Contrastive, triplet and N-pair losses with analytic embedding gradients.

All three return plain sums over the mined units; normalisation by the
number of units is the training loop's job. Hinge subgradients are taken
as zero when the hinge argument is exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPairSet, EmptyTripletSet, EmptyTupletSet


def _index_array(x, width):
    a = np.asarray(x, dtype=np.int64)
    if a.size == 0:
        return a.reshape(0, width)
    return a.reshape(-1, width)


@dataclass(frozen=True)
class PairSet:
    positives: np.ndarray  # (P, 2)
    negatives: np.ndarray  # (Q, 2)

    def __post_init__(self):
        object.__setattr__(self, "positives", _index_array(self.positives, 2))
        object.__setattr__(self, "negatives", _index_array(self.negatives, 2))

    def __len__(self):
        return len(self.positives) + len(self.negatives)

    def validate(self, labels):
        labels = np.asarray(labels)
        n = len(labels)
        for name, pairs, same in (("positive", self.positives, True),
                                  ("negative", self.negatives, False)):
            if len(pairs) == 0:
                continue
            i, j = pairs[:, 0], pairs[:, 1]
            if np.any((pairs < 0) | (pairs >= n)):
                raise ValueError(f"{name} pair index out of bounds")
            if np.any(i == j):
                raise ValueError(f"{name} pair with i == j")
            if np.any((labels[i] == labels[j]) != same):
                raise ValueError(f"{name} pair violates its label constraint")


@dataclass(frozen=True)
class TripletSet:
    triplets: np.ndarray  # (T, 3): anchor, positive, negative

    def __post_init__(self):
        object.__setattr__(self, "triplets", _index_array(self.triplets, 3))

    def __len__(self):
        return len(self.triplets)

    def validate(self, labels):
        labels = np.asarray(labels)
        t = self.triplets
        if len(t) == 0:
            return
        if np.any((t < 0) | (t >= len(labels))):
            raise ValueError("triplet index out of bounds")
        a, p, n = t.T
        if np.any(a == p):
            raise ValueError("triplet with anchor == positive")
        if np.any(labels[a] != labels[p]) or np.any(labels[a] == labels[n]):
            raise ValueError("triplet violates its label constraint")


@dataclass(frozen=True)
class TupletSet:
    """(anchor, positive, negatives...) records.

    ``negatives`` is a rectangular ``(T, W)`` array; ragged inputs are padded
    with -1, which marks an absent slot.
    """

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchors", np.asarray(self.anchors, dtype=np.int64).ravel())
        object.__setattr__(self, "positives", np.asarray(self.positives, dtype=np.int64).ravel())
        neg = np.asarray(self.negatives, dtype=np.int64)
        if neg.ndim == 1:
            neg = neg.reshape(len(self.anchors), -1)
        object.__setattr__(self, "negatives", neg)
        if not (len(self.anchors) == len(self.positives) == len(self.negatives)):
            raise ValueError("anchors, positives and negatives must align")

    @classmethod
    def from_records(cls, records):
        """Build from ``[(anchor, positive, [neg, ...]), ...]``."""
        records = list(records)
        width = max((len(r[2]) for r in records), default=0)
        neg = np.full((len(records), width), -1, dtype=np.int64)
        for row, (_, _, negs) in enumerate(records):
            neg[row, :len(negs)] = negs
        return cls([r[0] for r in records], [r[1] for r in records], neg)

    @property
    def mask(self):
        return self.negatives >= 0

    def __len__(self):
        return len(self.anchors)

    def validate(self, labels):
        labels = np.asarray(labels)
        n = len(labels)
        for row in range(len(self)):
            a, p = self.anchors[row], self.positives[row]
            negs = self.negatives[row][self.negatives[row] >= 0]
            idx = np.concatenate([[a, p], negs])
            if np.any(idx >= n) or np.any(idx < 0):
                raise ValueError("tuplet index out of bounds")
            if a == p or labels[a] != labels[p]:
                raise ValueError("tuplet positive violates its label constraint")
            if len(negs) == 0:
                raise ValueError("tuplet without negatives")
            neg_labels = labels[negs]
            if np.any(neg_labels == labels[a]):
                raise ValueError("tuplet negative shares the anchor label")
            if len(set(neg_labels.tolist())) != len(negs):
                raise ValueError("tuplet negatives must come from distinct classes")


@dataclass
class LossGradients:
    value: float
    d_embeddings: np.ndarray

    def scaled(self, factor):
        return LossGradients(self.value * factor, self.d_embeddings * factor)


def _coupling(n, rows, cols, weights):
    """Dense ``(n, n)`` matrix with ``weights`` summed at ``(rows, cols)``.

    bincount keeps the accumulation order fixed, so results are reproducible.
    """
    flat = np.bincount(rows * n + cols, weights=weights, minlength=n * n)
    return flat.reshape(n, n)


def _pair_gradient(e, i, j, coef):
    """Gradient of ``sum_k coef_k * ||e_i_k - e_j_k||^2`` w.r.t. ``e``."""
    n = len(e)
    w = _coupling(n, i, j, coef)
    w = w + w.T
    return 2.0 * (w.sum(axis=1)[:, None] * e - w @ e)


def _sq_dist(e, i, j):
    diff = e[i] - e[j]
    return np.einsum("ij,ij->i", diff, diff)


def contrastive_loss(embeddings, pairs, margin=1.0):
    """Sum of positive-pair distances plus hinged negative-pair margins."""
    if len(pairs) == 0:
        raise EmptyPairSet("no positive or negative pairs")
    e = np.asarray(embeddings, dtype=np.float64)
    pi, pj = pairs.positives.T
    ni, nj = pairs.negatives.T
    slack = margin - _sq_dist(e, ni, nj)
    active = slack > 0.0
    value = float(np.sum(_sq_dist(e, pi, pj)) + np.sum(slack[active]))
    coef = np.concatenate([np.ones(len(pi)), -active.astype(np.float64)])
    grad = _pair_gradient(e, np.concatenate([pi, ni]), np.concatenate([pj, nj]), coef)
    return LossGradients(value, grad)


def triplet_loss(embeddings, triplets, margin=1.0):
    """Sum over triplets of ``max(0, m + D(a, p) - D(a, n))``."""
    if len(triplets) == 0:
        raise EmptyTripletSet("no triplets")
    e = np.asarray(embeddings, dtype=np.float64)
    a, p, n = triplets.triplets.T
    hinge = margin + _sq_dist(e, a, p) - _sq_dist(e, a, n)
    active = (hinge > 0.0).astype(np.float64)
    grad = _pair_gradient(e, np.concatenate([a, a]), np.concatenate([p, n]),
                          np.concatenate([active, -active]))
    return LossGradients(float(np.sum(hinge[hinge > 0.0])), grad)


def npair_loss(embeddings, tuplets):
    """Sum over tuplets of ``log(1 + sum_c exp(a.n_c - a.p))``.

    Evaluated as a log-sum-exp over ``[0, z_1, ..., z_W]`` shifted by its
    maximum. The gradient is linear in the embeddings, so it is assembled as
    one coupling matrix applied to ``e``.
    """
    if len(tuplets) == 0:
        raise EmptyTupletSet("no tuplets")
    e = np.asarray(embeddings, dtype=np.float64)
    mask = tuplets.mask
    if not np.all(mask.any(axis=1)):
        raise EmptyTupletSet("every tuplet needs at least one negative")
    neg_idx = np.where(mask, tuplets.negatives, 0)
    anc_idx, pos_idx = tuplets.anchors, tuplets.positives

    anc = e[anc_idx]
    ap = np.einsum("td,td->t", anc, e[pos_idx])
    an = np.einsum("td,twd->tw", anc, e[neg_idx])
    z = np.where(mask, an - ap[:, None], -np.inf)

    shift = np.maximum(0.0, z.max(axis=1))
    ez = np.exp(z - shift[:, None])
    denom = np.exp(-shift) + ez.sum(axis=1)
    value = float(np.sum(shift + np.log(denom)))

    s = ez / denom[:, None]                    # softmax weight of each negative
    s_tot = s.sum(axis=1)
    n = len(e)
    a_rep = np.broadcast_to(anc_idx[:, None], neg_idx.shape)[mask]
    negs, s_flat = neg_idx[mask], s[mask]
    rows = np.concatenate([a_rep, negs, anc_idx, pos_idx])
    cols = np.concatenate([negs, a_rep, pos_idx, anc_idx])
    w = np.concatenate([s_flat, s_flat, -s_tot, -s_tot])
    grad = _coupling(n, rows, cols, w) @ e
    return LossGradients(value, grad)


LOSSES = ("contrastive", "triplet", "npair")
