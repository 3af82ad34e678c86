"""Central finite-difference checks for every analytic gradient in the package."""

from dataclasses import dataclass

import numpy as np

from .density import DensityState, density_regularizer
from .losses import contrastive_loss, npair_loss, triplet_loss
from .model import EmbeddingNet
from .sampler import mine_pairs, mine_triplets, mine_tuplets
from .training import TrainConfig, mine, objective

STEP = 1e-5
TOLERANCE = 1e-4
THRESHOLD = 1e-8
COMPONENTS = ("contrastive", "triplet", "npair", "density", "network")


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f()
        flat[k] = orig - step
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * step)
    return g


def max_rel_error(analytic, numeric, threshold=THRESHOLD):
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    sel = np.abs(a) > threshold
    if not sel.any():
        return 0.0
    return float(np.max(np.abs(a[sel] - n[sel]) / np.maximum(np.abs(a[sel]), np.abs(n[sel]))))


@dataclass
class CheckResult:
    component: str
    worst: float
    coordinates: int
    passed: bool


def random_batch(rng, batch=12, dim=8, classes=4):
    labels = np.arange(batch) % classes
    x = rng.standard_normal((batch, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True), labels


def _check_loss(name, rng, perturb):
    e, labels = random_batch(rng, batch=12)
    if name == "contrastive":
        units = mine_pairs(labels)
        fn = lambda: contrastive_loss(e, units, 1.0)
    elif name == "triplet":
        units = mine_triplets(labels, 2, rng)
        fn = lambda: triplet_loss(e, units, 1.0)
    else:
        units = mine_tuplets(labels, rng)
        fn = lambda: npair_loss(e, units)
    analytic = fn().d_embeddings + perturb
    numeric = numeric_grad(lambda: fn().value, e)
    return [max_rel_error(analytic, numeric)], analytic.size


def _random_state(rng, classes, eta=0.5):
    return DensityState(list(range(classes)), rng.uniform(0.2, 1.0, classes),
                        rng.uniform(0.5, 4.0, classes), eta=eta, lam=10.0)


def _check_density(rng, perturb):
    e, labels = random_batch(rng, batch=20, classes=4)
    state = _random_state(rng, 4)
    out = density_regularizer(e, labels, state)
    f = lambda: density_regularizer(e, labels, state).value
    errs = [max_rel_error(out.d_embeddings + perturb, numeric_grad(f, e)),
            max_rel_error(out.d_alpha + perturb, numeric_grad(f, state.alphas))]
    return errs, out.d_embeddings.size + out.d_alpha.size


def _check_network(rng, perturb):
    errs, coords = [], 0
    for loss in ("contrastive", "triplet", "npair"):
        cfg = TrainConfig(loss=loss, lam=10.0, hidden=(10,), embed_dim=8,
                          triplets_per_anchor=2, normalize_base=True)
        net = EmbeddingNet.create(6, cfg.hidden, cfg.embed_dim, rng=rng)
        for layer in net.layers:
            layer.bias += 0.1 * rng.standard_normal(layer.bias.shape)
        x = rng.standard_normal((16, 6))
        labels = np.arange(16) % 4
        state = _random_state(rng, 4)
        units = mine(cfg, labels, rng)
        step = objective(cfg, net, state, x, labels, units)
        f = lambda: objective(cfg, net, state, x, labels, units).value
        for p, g in zip(net.parameters(), step.param_grads):
            errs.append(max_rel_error(g + perturb, numeric_grad(f, p)))
            coords += p.size
        errs.append(max_rel_error(step.d_alpha + perturb, numeric_grad(f, state.alphas)))
        coords += state.alphas.size
    return errs, coords


def run(components=COMPONENTS, seed=0, perturb=0.0, tolerance=TOLERANCE):
    """Run the selected suites; ``perturb`` is added to every analytic gradient (test hook)."""
    results = []
    for name in components:
        rng = np.random.default_rng([seed, COMPONENTS.index(name)])
        if name in ("contrastive", "triplet", "npair"):
            errs, coords = _check_loss(name, rng, perturb)
        elif name == "density":
            errs, coords = _check_density(rng, perturb)
        elif name == "network":
            errs, coords = _check_network(rng, perturb)
        else:
            raise ValueError(f"unknown gradcheck component {name!r}")
        worst = max(errs)
        results.append(CheckResult(name, worst, coords, worst < tolerance))
    return results
