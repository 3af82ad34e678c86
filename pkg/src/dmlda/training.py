"""End-to-end training of the embedding network with the density regularizer.

Each iteration: draw a class-balanced batch, embed it, mine the loss units,
evaluate the base loss and the regularizer, combine them, backpropagate and
take one Adam step on the network weights and the target densities together.

The base loss and its gradient are divided by the number of mined units
(pairs, triplets or tuplets) when ``normalize_base`` is set (the default), so
that ``lam`` weighs the regularizer against a per-unit loss regardless of
batch composition.
"""

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .density import DensityState, density_regularizer, joint_objective
from .errors import AllSingletonClasses, DivergenceDetected
from .losses import LOSSES, contrastive_loss, npair_loss, triplet_loss
from .model import AdamState, EmbeddingNet, adam_step, backward, forward
from .sampler import BatchPlan, make_batch, mine_pairs, mine_triplets, mine_tuplets

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: str = "contrastive"
    lam: float = 10.0
    eta: float = 0.5
    margin: float = 1.0
    alpha_init: float = 0.5
    classes_per_batch: int = 10
    samples_per_class: int = 10
    accumulate: bool = False
    batch_capacity: int = 100
    lr: float = 1e-3
    alpha_lr_scale: float = 1.0
    adam_eps: float = 1e-8
    iterations: int = 3000
    seed: int = 0
    hidden: tuple = (256,)
    embed_dim: int = 128
    triplets_per_anchor: int = 5
    normalize_base: bool = True
    density_normalization: str = "batch"
    log_every: int = 100

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.margin <= 0 or self.lr <= 0 or self.iterations < 0:
            raise ValueError("margin and lr must be > 0, iterations >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def plan(self):
        return BatchPlan(self.classes_per_batch, self.samples_per_class,
                         self.accumulate, self.batch_capacity)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainState:
    net: EmbeddingNet
    density: DensityState
    adam: AdamState
    rng: np.random.Generator
    iteration: int = 0


def init_state(config, dataset):
    rng = np.random.default_rng(config.seed)
    net = EmbeddingNet.create(dataset.dim, config.hidden, config.embed_dim, rng=rng)
    density = DensityState.from_features(dataset.features, dataset.labels,
                                         config.alpha_init, config.eta, config.lam,
                                         config.density_normalization)
    return TrainState(net, density, AdamState(eps=config.adam_eps), rng)


def mine(config, labels, rng):
    if config.loss == "contrastive":
        return mine_pairs(labels)
    if config.loss == "triplet":
        return mine_triplets(labels, config.triplets_per_anchor, rng)
    return mine_tuplets(labels, rng)


def base_loss(config, embeddings, units):
    if config.loss == "contrastive":
        out = contrastive_loss(embeddings, units, config.margin)
    elif config.loss == "triplet":
        out = triplet_loss(embeddings, units, config.margin)
    else:
        out = npair_loss(embeddings, units)
    if config.normalize_base:
        out = out.scaled(1.0 / len(units))
    return out


@dataclass
class StepResult:
    value: float
    base_value: float
    reg_value: float
    param_grads: list
    d_alpha: np.ndarray
    embeddings: np.ndarray
    batch_densities: list = field(default_factory=list)


def objective(config, net, density, features, labels, units):
    """Total objective on one batch and its gradients in the weights and alphas."""
    emb, cache = forward(net, features)
    base = base_loss(config, emb, units)
    try:
        reg = density_regularizer(emb, labels, density)
    except AllSingletonClasses:
        if config.lam > 0:
            raise
        reg = None
    joint = joint_objective(base, reg, config.lam)
    grads = backward(net, cache, joint.d_embeddings)
    d_alpha = joint.d_alpha if joint.d_alpha is not None else np.zeros_like(density.alphas)
    return StepResult(joint.value, joint.base_value, joint.reg_value, grads, d_alpha, emb,
                      [] if reg is None else [c.d_avg for c in reg.densities])


def format_record(record):
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in record.items())


def train(config, dataset, state=None, until=None, log_sink=None):
    """Run training until ``until`` (default ``config.iterations``) iterations are done.

    Returns the mutated ``state`` and the list of log records. Passing a
    state restored from a checkpoint continues exactly where it stopped.
    """
    state = init_state(config, dataset) if state is None else state
    until = config.iterations if until is None else until
    plan = config.plan
    records = []
    n_weights = len(state.net.parameters())
    scales = [1.0] * n_weights + [config.alpha_lr_scale]
    nonneg = [False] * n_weights + [True]
    if config.normalize_base and state.iteration == 0:
        log.info("base %s loss is averaged over mined units", config.loss)

    while state.iteration < until:
        batch = make_batch(dataset, plan, state.rng)
        units = mine(config, batch.labels, state.rng)
        step = objective(config, state.net, state.density, batch.features, batch.labels, units)
        if not np.isfinite(step.value):
            raise DivergenceDetected(f"objective became {step.value} at iteration {state.iteration}")

        params = state.net.parameters() + [state.density.alphas]
        adam_step(params, step.param_grads + [step.d_alpha], state.adam, config.lr,
                  lr_scales=scales, nonneg=nonneg)
        state.iteration += 1

        it = state.iteration
        if it == 1 or it % config.log_every == 0 or it == until:
            rec = {
                "iteration": it,
                "loss_base": float(step.base_value),
                "loss_da": float(step.reg_value),
                "mean_alpha": float(state.density.alphas.mean()),
                "mean_batch_density": float(np.mean(step.batch_densities))
                if step.batch_densities else float("nan"),
            }
            records.append(rec)
            if log_sink is not None:
                log_sink.write(format_record(rec) + "\n")
    return state, records


def checkpoint_from_state(state, config):
    from .data import Checkpoint

    return Checkpoint(state.net, state.adam, state.density, config.to_dict(), state.iteration,
                      state.rng.bit_generator.state)


def state_from_checkpoint(ckpt):
    """Rebuild a ``TrainState`` (including the RNG stream) from a loaded checkpoint."""
    rng = np.random.default_rng()
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return TrainState(ckpt.net, ckpt.density, ckpt.adam, rng, ckpt.iteration)
