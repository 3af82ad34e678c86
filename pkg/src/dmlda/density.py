"""Per-class density estimation and the density-adaptivity regularizer.

The density of a class is the mean squared distance of its embeddings to
their centroid. The regularizer pulls every class density toward a learnable
target ``alpha_c``, rewards large targets, and keeps the ratios of targets
close to the ratios of the classes' densities in the raw input features
(raised to ``eta``) through a soft quadratic penalty.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AllSingletonClasses, DimMismatch, EmptyClass, UnknownClass
from .losses import LossGradients

log = logging.getLogger(__name__)

D0_FLOOR = 1e-6


@dataclass
class ClassDensity:
    class_id: object
    centroid: np.ndarray
    d_avg: float
    count: int


def _class_rows(embeddings_of_class):
    x = np.asarray(embeddings_of_class, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimMismatch(f"expected (n, d) rows, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyClass("class has no samples")
    return x


def class_centroid(embeddings_of_class):
    """Arithmetic mean of the rows. Not re-normalised."""
    return _class_rows(embeddings_of_class).mean(axis=0)


def avg_intra_distance(embeddings_of_class, class_id=None):
    x = _class_rows(embeddings_of_class)
    # centre on the first row before averaging so a collapsed class gives exactly 0
    shifted = x - x[0]
    offset = shifted.mean(axis=0)
    mu = x[0] + offset
    diff = shifted - offset
    d_avg = float(np.einsum("ij,ij->", diff, diff) / len(x))
    return ClassDensity(class_id, mu, d_avg, len(x))


def compute_d0(features_by_class):
    """Density of every class in the raw feature space.

    ``features_by_class`` maps class id to an ``(n_c, D)`` matrix holding the
    full training set of that class.
    """
    return {c: avg_intra_distance(x, c).d_avg for c, x in features_by_class.items()}


def group_by_class(features, labels):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes, inverse = np.unique(labels, return_inverse=True)
    return {c.item() if hasattr(c, "item") else c: features[inverse == k]
            for k, c in enumerate(classes)}


@dataclass
class DensityState:
    """Learnable target densities plus the cached raw-feature densities.

    ``normalization`` selects the class count used in front of the sums:
    ``"batch"`` divides by the number of classes that take part in the current
    batch, ``"global"`` by the number of classes known to the state.
    """

    classes: list
    alphas: np.ndarray
    d0: np.ndarray
    eta: float = 0.5
    lam: float = 10.0
    normalization: str = "batch"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.classes = list(self.classes)
        self.alphas = np.asarray(self.alphas, dtype=np.float64).copy()
        self.d0 = np.asarray(self.d0, dtype=np.float64).copy()
        n = len(self.classes)
        if self.alphas.shape != (n,) or self.d0.shape != (n,):
            raise DimMismatch("alphas and d0 must have one entry per class")
        if len(set(self.classes)) != n:
            raise ValueError("duplicate class ids")
        if not (np.all(np.isfinite(self.alphas)) and np.all(self.alphas >= 0)):
            raise ValueError("alphas must be finite and >= 0")
        if not (np.all(np.isfinite(self.d0)) and np.all(self.d0 >= 0)):
            raise ValueError("d0 must be finite and >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.normalization not in ("batch", "global"):
            raise ValueError("normalization must be 'batch' or 'global'")
        self._index = {c: k for k, c in enumerate(self.classes)}

    @classmethod
    def from_features(cls, features, labels, alpha_init=0.5, eta=0.5, lam=10.0,
                      normalization="batch"):
        d0 = compute_d0(group_by_class(features, labels))
        classes = list(d0)
        return cls(classes, np.full(len(classes), float(alpha_init)),
                   np.array([d0[c] for c in classes]), eta, lam, normalization)

    def index_of(self, class_id):
        try:
            return self._index[class_id]
        except KeyError:
            raise UnknownClass(f"class {class_id!r} is not tracked by the density state") from None

    def weights(self):
        """``max(d0, floor) ** eta`` for every class."""
        d0 = self.d0
        if np.any(d0 < D0_FLOOR):
            bad = [self.classes[k] for k in np.flatnonzero(d0 < D0_FLOOR)]
            log.warning("d0 below %.0e for classes %s; flooring before exponentiation",
                        D0_FLOOR, bad)
            d0 = np.maximum(d0, D0_FLOOR)
        return d0 ** self.eta

    def copy(self):
        return DensityState(list(self.classes), self.alphas.copy(), self.d0.copy(),
                            self.eta, self.lam, self.normalization)


@dataclass
class RegularizerOutput:
    value: float
    d_embeddings: np.ndarray
    d_alpha: np.ndarray
    penalty: float
    densities: list  # ClassDensity for every class that took part


def correlation_penalty(alphas, weights, count=None):
    """``(1/C^2) sum_{i,j} (w_j a_i - w_i a_j)^2`` and its gradient in ``alphas``.

    ``count`` overrides C (defaults to ``len(alphas)``).
    """
    a = np.asarray(alphas, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    c = len(a) if count is None else count
    r = a[:, None] * w[None, :] - w[:, None] * a[None, :]  # r[i, j] = w_j a_i - w_i a_j
    value = float(np.sum(r * r) / c**2)
    # d/da_k: rows i=k contribute 2 r[k,j] w_j, columns j=k contribute -2 r[i,k] w_i
    grad = (2.0 * (r @ w) - 2.0 * (r.T @ w)) / c**2
    return value, grad


def density_regularizer(embeddings, labels, state):
    """Value and gradients of the regularizer on one batch.

    Classes with a single sample in the batch are skipped, since their density
    is identically zero. ``d_alpha`` is zero for classes absent from the batch.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if e.ndim != 2 or len(labels) != len(e):
        raise DimMismatch("embeddings and labels must align")

    present, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    idx_all = np.array([state.index_of(c.item() if hasattr(c, "item") else c)
                        for c in present], dtype=np.int64)
    keep = counts >= 2
    if not np.any(keep):
        raise AllSingletonClasses("every class in the batch has a single sample")

    kept = np.flatnonzero(keep)
    sidx = idx_all[kept]
    n_cls = len(kept) if state.normalization == "batch" else len(state.classes)

    d_emb = np.zeros_like(e)
    dens = np.empty(len(kept))
    densities = []
    rows_of = []
    for k, b in enumerate(kept):
        rows = np.flatnonzero(inverse == b)
        cd = avg_intra_distance(e[rows], present[b].item())
        dens[k] = cd.d_avg
        densities.append(cd)
        rows_of.append((rows, cd))

    alphas = state.alphas[sidx]
    weights = state.weights()[sidx]
    gap = dens - alphas
    penalty, g_pen = correlation_penalty(alphas, weights, n_cls)
    value = float(np.sum(gap * gap) / n_cls - np.sum(alphas) / n_cls + penalty)

    # dD_c/df_i = (2/n_c)(f_i - mu_c); the centroid term cancels exactly
    for k, (rows, cd) in enumerate(rows_of):
        coef = 2.0 * gap[k] / n_cls * 2.0 / cd.count
        d_emb[rows] = coef * (e[rows] - cd.centroid)

    d_alpha = np.zeros_like(state.alphas)
    d_alpha[sidx] = -2.0 * gap / n_cls - 1.0 / n_cls + g_pen
    return RegularizerOutput(value, d_emb, d_alpha, penalty, densities)


@dataclass
class JointObjective:
    value: float
    d_embeddings: np.ndarray
    d_alpha: np.ndarray
    base_value: float
    reg_value: float


def joint_objective(base, reg, lam):
    """``base + lam * reg`` for value and both gradients.

    ``reg`` may be None, meaning the regularizer was not evaluated; that is
    only allowed together with ``lam == 0``.
    """
    if reg is None:
        if lam != 0:
            raise ValueError("regularizer output required when lambda != 0")
        return JointObjective(base.value, base.d_embeddings.copy(), None, base.value, 0.0)
    if base.d_embeddings.shape != reg.d_embeddings.shape:
        raise DimMismatch("base and regularizer gradients differ in shape")
    if lam == 0:
        return JointObjective(base.value, base.d_embeddings.copy(),
                              np.zeros_like(reg.d_alpha), base.value, reg.value)
    return JointObjective(base.value + lam * reg.value,
                          base.d_embeddings + lam * reg.d_embeddings,
                          lam * reg.d_alpha, base.value, reg.value)


__all__ = [
    "ClassDensity", "DensityState", "JointObjective", "LossGradients",
    "RegularizerOutput", "avg_intra_distance", "class_centroid", "compute_d0",
    "correlation_penalty", "density_regularizer", "group_by_class", "joint_objective",
]
