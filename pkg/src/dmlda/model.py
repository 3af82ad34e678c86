"""Feed-forward embedding network with L2-normalised output, plus Adam."""

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheMismatch, DimMismatch, DivergenceDetected
from .linalg import l2_normalize_rows

ACTIVATIONS = ("relu", "none")


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray    # (fan_out,)
    activation: str = "none"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimMismatch("bias must match the weight's output dimension")


@dataclass
class EmbeddingNet:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise DimMismatch("adjacent layer dimensions do not chain")
        if self.layers[-1].activation != "none":
            raise ValueError("the last layer must be linear; normalisation follows it")

    @classmethod
    def create(cls, input_dim, hidden=(256,), out_dim=128, seed=0, rng=None):
        """He-initialised ReLU MLP ending in a linear layer of size ``out_dim``."""
        rng = np.random.default_rng(seed) if rng is None else rng
        dims = [input_dim, *hidden, out_dim]
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            last = k == len(dims) - 2
            scale = np.sqrt((1.0 if last else 2.0) / fan_in)
            layers.append(Layer(rng.standard_normal((fan_in, fan_out)) * scale,
                                np.zeros(fan_out), "none" if last else "relu"))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def parameters(self):
        """Flat list of parameter arrays: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        return EmbeddingNet([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                             for l in self.layers])

    def embed(self, features):
        return forward(self, features)[0]


@dataclass
class ForwardCache:
    inputs: list        # input to every layer
    preacts: list       # affine output of every layer
    unit: np.ndarray    # normalised output
    norms: np.ndarray   # row norms before normalisation
    shapes: tuple       # weight shapes at forward time


def forward(net, batch_features):
    x = np.asarray(batch_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimMismatch(f"features have shape {x.shape}, network expects {net.input_dim} columns")
    inputs, preacts = [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight + layer.bias
        preacts.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    if not np.all(np.isfinite(h)):
        raise DivergenceDetected("network output is not finite")
    unit, norms = l2_normalize_rows(h)
    cache = ForwardCache(inputs, preacts, unit, norms,
                         tuple(l.weight.shape for l in net.layers))
    return unit, cache


def normalize_backward(unit, norms, d_unit):
    """Pull a gradient back through ``y -> y / ||y||`` row by row."""
    radial = np.einsum("ij,ij->i", unit, d_unit)
    return (d_unit - unit * radial[:, None]) / norms[:, None]


def backward(net, cache, d_embeddings):
    """Gradients for every parameter, in the order of ``net.parameters()``."""
    d = np.asarray(d_embeddings, dtype=np.float64)
    if (cache.shapes != tuple(l.weight.shape for l in net.layers)
            or d.shape != cache.unit.shape):
        raise CacheMismatch("cache does not belong to this network / gradient shape")
    grads = [None] * (2 * len(net.layers))
    d_h = normalize_backward(cache.unit, cache.norms, d)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            d_z = d_h * (cache.preacts[k] > 0.0)
        else:
            d_z = d_h
        grads[2 * k] = cache.inputs[k].T @ d_z
        grads[2 * k + 1] = d_z.sum(axis=0)
        if k:
            d_h = d_z @ layer.weight.T
    return grads


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self):
        return AdamState(self.beta1, self.beta2, self.eps, self.t,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(params, grads, state, lr, lr_scales=None, nonneg=None):
    """One bias-corrected Adam update, applied in place.

    ``lr_scales`` optionally multiplies the learning rate per parameter and
    ``nonneg`` flags parameters that are clamped to ``>= 0`` after the step.
    Returns ``(params, state)``.
    """
    if len(params) != len(grads):
        raise DimMismatch("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise DimMismatch("optimizer state does not match the parameter list")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[k].shape != p.shape:
            raise DimMismatch(f"shape mismatch for parameter {k}")
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = lr * (1.0 if lr_scales is None else lr_scales[k])
        p -= step * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if nonneg is not None and nonneg[k]:
            np.maximum(p, 0.0, out=p)
    return params, state
