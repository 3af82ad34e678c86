"""Class-balanced batching and mining of pairs, triplets and tuplets."""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientClasses, InsufficientSamples, NoValidTriplets, NoValidTuplets
from .losses import PairSet, TripletSet, TupletSet


@dataclass(frozen=True)
class BatchPlan:
    """P classes x K samples per batch.

    With ``accumulate`` set, whole classes are added in random order until the
    next one would overflow ``capacity`` (for datasets with tiny classes).
    """

    classes_per_batch: int = 10
    samples_per_class: int = 10
    accumulate: bool = False
    capacity: int = 100

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.samples_per_class < 1:
            raise ValueError("need P >= 2 and K >= 1")
        if not self.accumulate and self.classes_per_batch * self.samples_per_class > self.capacity:
            raise ValueError("P x K exceeds batch capacity")


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    source_indices: np.ndarray

    def __len__(self):
        return len(self.labels)


def make_batch(dataset, plan, rng):
    labels = np.asarray(dataset.labels)
    classes, inverse = np.unique(labels, return_inverse=True)
    members = [np.flatnonzero(inverse == k) for k in range(len(classes))]

    if plan.accumulate:
        order = rng.permutation(len(classes))
        picked = []
        total = 0
        for k in order:
            if total + len(members[k]) > plan.capacity:
                break
            picked.append(members[k])
            total += len(members[k])
        if len(picked) < 2:
            raise InsufficientClasses("fewer than 2 whole classes fit into the batch")
        rows = np.concatenate(picked)
    else:
        if len(classes) < plan.classes_per_batch:
            raise InsufficientClasses(
                f"dataset has {len(classes)} classes, batch needs {plan.classes_per_batch}")
        chosen = rng.choice(len(classes), size=plan.classes_per_batch, replace=False)
        rows = []
        for k in chosen:
            if len(members[k]) < plan.samples_per_class:
                raise InsufficientSamples(
                    f"class {classes[k]!r} has {len(members[k])} samples, "
                    f"batch needs {plan.samples_per_class}")
            rows.append(rng.choice(members[k], size=plan.samples_per_class, replace=False))
        rows = np.concatenate(rows)

    return Batch(np.asarray(dataset.features)[rows], labels[rows], rows)


def mine_pairs(labels):
    """Every unordered pair in the batch, split by label equality."""
    labels = np.asarray(getattr(labels, "labels", labels))
    i, j = np.triu_indices(len(labels), k=1)
    same = labels[i] == labels[j]
    return PairSet(np.stack([i[same], j[same]], axis=1),
                   np.stack([i[~same], j[~same]], axis=1))


def _class_blocks(labels):
    """Rows sorted by class plus, per row, its class's block start and size."""
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.empty(len(labels), dtype=np.int64)
    rank[order] = np.arange(len(labels))
    return inverse, counts, order, starts, rank


def _draw_positive(rng, size, starts, counts, rank, order):
    """Uniform same-class partner for each anchor (never the anchor itself)."""
    r = (rng.random(size) * (counts - 1)).astype(np.int64)
    offset = rank - starts
    r = r + (r >= offset)
    return order[starts + r]


def mine_triplets(labels, per_anchor, rng):
    """``per_anchor`` random (positive, negative) draws for every anchor that has a positive."""
    labels = np.asarray(getattr(labels, "labels", labels))
    n = len(labels)
    inverse, counts, order, starts, rank = _class_blocks(labels)
    if per_anchor <= 0 or len(counts) < 2:
        raise NoValidTriplets("batch yields no valid triplets")
    anchors = np.flatnonzero(counts[inverse] >= 2)
    if len(anchors) == 0:
        raise NoValidTriplets("batch yields no valid triplets")

    a = np.repeat(anchors, per_anchor)
    st, ct = starts[inverse[a]], counts[inverse[a]]
    pos = _draw_positive(rng, len(a), st, ct, rank[a], order)
    # negatives: uniform over rows outside the anchor's class block
    r = (rng.random(len(a)) * (n - ct)).astype(np.int64)
    neg = order[np.where(r >= st, r + ct, r)]
    return TripletSet(np.stack([a, pos, neg], axis=1))


def mine_tuplets(labels, rng):
    """One tuplet per anchor: a positive plus one negative from every other class."""
    labels = np.asarray(getattr(labels, "labels", labels))
    inverse, counts, order, starts, rank = _class_blocks(labels)
    n_cls = len(counts)
    anchors = np.flatnonzero(counts[inverse] >= 2)
    if n_cls < 2 or len(anchors) == 0:
        raise NoValidTuplets("batch yields no valid tuplets")

    ci = inverse[anchors]
    pos = _draw_positive(rng, len(anchors), starts[ci], counts[ci], rank[anchors], order)
    # one random member of every class, then drop the anchor's own class column
    pick = (rng.random((len(anchors), n_cls)) * counts[None, :]).astype(np.int64)
    members = order[starts[None, :] + pick]
    keep = np.arange(n_cls)[None, :] != ci[:, None]
    negatives = members[keep].reshape(len(anchors), n_cls - 1)
    return TupletSet(anchors, pos, negatives)
