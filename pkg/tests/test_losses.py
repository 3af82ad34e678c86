import math

import numpy as np
import pytest

from dmlda.errors import EmptyPairSet, EmptyTripletSet, EmptyTupletSet
from dmlda.losses import (PairSet, TripletSet, TupletSet, contrastive_loss, npair_loss,
                          triplet_loss)
from dmlda.sampler import mine_pairs, mine_triplets, mine_tuplets

from conftest import unit_rows


def at_cos(c):
    """Unit vector in the plane with cosine ``c`` to (1, 0)."""
    return [c, math.sqrt(1.0 - c * c)]


# -- naive reference implementations, one term at a time ------------------

def sqd(u, v):
    return sum((a - b) ** 2 for a, b in zip(u, v))


def ip(u, v):
    return sum(a * b for a, b in zip(u, v))


def naive_contrastive(e, labels, m):
    total = 0.0
    for i in range(len(e)):
        for j in range(i + 1, len(e)):
            d = sqd(e[i], e[j])
            total += d if labels[i] == labels[j] else max(0.0, m - d)
    return total


def naive_triplet(e, triplets, m):
    return sum(max(0.0, m + sqd(e[a], e[p]) - sqd(e[a], e[n])) for a, p, n in triplets)


def naive_npair(e, records):
    total = 0.0
    for a, p, negs in records:
        total += math.log(1.0 + sum(math.exp(ip(e[a], e[k]) - ip(e[a], e[p])) for k in negs))
    return total


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, n):
    sel = np.abs(a) > 1e-8
    return float(np.max(np.abs(a[sel] - n[sel]) / np.maximum(np.abs(a[sel]), np.abs(n[sel]))))


# -- contrastive ----------------------------------------------------------

def test_contrastive_identical_positive_is_zero():
    e = np.array([[0.6, 0.8], [0.6, 0.8]])
    out = contrastive_loss(e, PairSet([[0, 1]], []), 1.0)
    assert out.value == 0.0
    assert np.all(out.d_embeddings == 0.0)


def test_contrastive_inactive_negative():
    e = np.array([[1.0, 0.0], [-1.0, 0.0]])
    out = contrastive_loss(e, PairSet([], [[0, 1]]), 1.0)
    assert out.value == 0.0
    assert np.all(out.d_embeddings == 0.0)


def test_contrastive_hand_value():
    # positive pair at D = 0.5 plus negative pair at D = 0.5 -> 0.5 + (1 - 0.5) = 1
    e = np.array([[1.0, 0.0], at_cos(0.75), [0.0, 1.0], at_cos(math.sqrt(1 - 0.75**2))])
    assert sqd(e[0], e[1]) == pytest.approx(0.5, abs=1e-15)
    assert sqd(e[2], e[3]) == pytest.approx(0.5, abs=1e-15)
    out = contrastive_loss(e, PairSet([[0, 1]], [[2, 3]]), 1.0)
    assert out.value == pytest.approx(1.0, abs=1e-12)


def test_contrastive_boundary_subgradient_is_zero():
    e = np.array([[1.0, 0.0], [0.0, 1.0]])  # D = 2 = margin
    out = contrastive_loss(e, PairSet([], [[0, 1]]), 2.0)
    assert out.value == 0.0
    assert np.all(out.d_embeddings == 0.0)


def test_contrastive_empty():
    with pytest.raises(EmptyPairSet):
        contrastive_loss(np.eye(2), PairSet([], []), 1.0)


# -- triplet --------------------------------------------------------------

def test_triplet_satisfied_margin():
    e = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])  # D+ = 0, D- = 2
    assert triplet_loss(e, TripletSet([[0, 1, 2]]), 1.0).value == 0.0


def test_triplet_hand_value():
    e = np.array([[1.0, 0.0], at_cos(0.75), at_cos(0.6)])  # D+ = 0.5, D- = 0.8
    assert triplet_loss(e, TripletSet([[0, 1, 2]]), 1.0).value == pytest.approx(0.7, abs=1e-12)


def test_triplet_all_coincident_gives_margin():
    e = np.array([[0.6, 0.8]] * 3)
    assert triplet_loss(e, TripletSet([[0, 1, 2]]), 1.0).value == 1.0


def test_triplet_empty():
    with pytest.raises(EmptyTripletSet):
        triplet_loss(np.eye(3), TripletSet(np.zeros((0, 3))), 1.0)


# -- n-pair ---------------------------------------------------------------

def test_npair_equal_products_one_negative():
    e = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    out = npair_loss(e, TupletSet([0], [1], [[2]]))
    assert out.value == pytest.approx(math.log(2.0), abs=1e-12)
    assert out.value == pytest.approx(0.693147, abs=1e-6)


def test_npair_orthogonal_negative():
    e = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = npair_loss(e, TupletSet([0], [1], [[2]]))
    assert out.value == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)
    assert out.value == pytest.approx(0.313262, abs=1e-6)


def test_npair_four_equal_negatives():
    e = np.tile([[0.0, 1.0]], (6, 1))
    out = npair_loss(e, TupletSet([0], [1], [[2, 3, 4, 5]]))
    assert out.value == pytest.approx(math.log(5.0), abs=1e-12)
    assert out.value == pytest.approx(1.609438, abs=1e-6)


def test_npair_large_inputs_stay_finite():
    e = np.array([[30.0, 0.0], [-30.0, 0.0], [30.0, 0.0]])  # exponent 1800
    out = npair_loss(e, TupletSet([0], [1], [[2]]))
    assert np.isfinite(out.value) and np.all(np.isfinite(out.d_embeddings))
    assert out.value == pytest.approx(1800.0)


def test_npair_ragged_records_are_masked():
    rng = np.random.default_rng(0)
    e = unit_rows(rng, 6, 4)
    records = [(0, 1, [2, 3, 4]), (3, 4, [5])]
    ts = TupletSet.from_records(records)
    assert npair_loss(e, ts).value == pytest.approx(naive_npair(e, records), abs=1e-12)


def test_npair_empty():
    with pytest.raises(EmptyTupletSet):
        npair_loss(np.eye(2), TupletSet([], [], np.zeros((0, 1))))


# -- oracle equivalence, gradients, invariances ---------------------------

@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n", [6, 13, 20])
def test_values_match_naive_loops(seed, n):
    rng = np.random.default_rng(seed)
    e = unit_rows(rng, n, 8)
    labels = np.arange(n) % 4
    assert contrastive_loss(e, mine_pairs(labels), 1.0).value == pytest.approx(
        naive_contrastive(e, labels, 1.0), abs=1e-10)
    trip = mine_triplets(labels, 3, rng)
    assert triplet_loss(e, trip, 1.0).value == pytest.approx(
        naive_triplet(e, trip.triplets.tolist(), 1.0), abs=1e-10)
    tup = mine_tuplets(labels, rng)
    records = [(a, p, list(ns)) for a, p, ns in zip(tup.anchors, tup.positives, tup.negatives)]
    assert npair_loss(e, tup).value == pytest.approx(naive_npair(e, records), abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    e = unit_rows(rng, 12, 8)
    labels = np.arange(12) % 4
    pairs = mine_pairs(labels)
    trip = mine_triplets(labels, 2, rng)
    tup = mine_tuplets(labels, rng)
    for fn in (lambda: contrastive_loss(e, pairs, 1.0),
               lambda: triplet_loss(e, trip, 1.0),
               lambda: npair_loss(e, tup)):
        analytic = fn().d_embeddings
        numeric = central_diff(lambda: fn().value, e)
        assert rel_err(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_non_negative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    e = unit_rows(rng, 16, 5)
    labels = rng.integers(0, 4, 16)
    labels[:8] = np.arange(8) % 4  # every class has >= 2 members
    pairs = mine_pairs(labels)
    trip = mine_triplets(labels, 2, rng)
    tup = mine_tuplets(labels, rng)

    c = contrastive_loss(e, pairs, 1.0).value
    t = triplet_loss(e, trip, 1.0).value
    n = npair_loss(e, tup).value
    assert c >= 0 and t >= 0 and n >= 0

    pp = rng.permutation(len(pairs.positives))
    pn = rng.permutation(len(pairs.negatives))
    shuffled = PairSet(pairs.positives[pp], pairs.negatives[pn])
    assert contrastive_loss(e, shuffled, 1.0).value == pytest.approx(c, abs=1e-12)
    pt = rng.permutation(len(trip))
    assert triplet_loss(e, TripletSet(trip.triplets[pt]), 1.0).value == pytest.approx(t, abs=1e-12)
    pu = rng.permutation(len(tup))
    shuffled_tup = TupletSet(tup.anchors[pu], tup.positives[pu], tup.negatives[pu])
    assert npair_loss(e, shuffled_tup).value == pytest.approx(n, abs=1e-12)


def test_gradient_accumulates_over_shared_rows():
    # the same pair listed twice contributes twice
    e = np.array([[1.0, 0.0], [0.0, 1.0]])
    once = contrastive_loss(e, PairSet([[0, 1]], []), 1.0)
    twice = contrastive_loss(e, PairSet([[0, 1], [1, 0]], []), 1.0)
    assert twice.value == 2 * once.value
    np.testing.assert_allclose(twice.d_embeddings, 2 * once.d_embeddings)
