"""Small dense helpers shared by the losses, the density term and evaluation.

Everything works on float64 numpy arrays. Row-wise variants operate on
``(n, d)`` matrices where each row is one embedding.
"""

import numpy as np

from .errors import DimMismatch, NormTooSmall

EPS_NORM = 1e-12


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimMismatch(f"expected a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatch(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def _check_same_dim(u, v):
    if u.shape != v.shape:
        raise DimMismatch(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")


def l2_normalize(v):
    """Scale ``v`` to unit Euclidean length.

    Raises NormTooSmall instead of clamping: a zero vector here means a
    dead embedding and should not be hidden.
    """
    v = as_vector(v)
    norm = np.sqrt(v @ v)
    if norm <= EPS_NORM:
        raise NormTooSmall(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def l2_normalize_rows(m):
    """Row-wise version of :func:`l2_normalize`; returns ``(unit_rows, norms)``."""
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        raise NormTooSmall(f"row {bad[0]} has norm {norms[bad[0]]:.3e}")
    return m / norms[:, None], norms


def sq_euclidean(u, v):
    u, v = as_vector(u), as_vector(v)
    _check_same_dim(u, v)
    diff = u - v
    return float(diff @ diff)


def dot(u, v):
    u, v = as_vector(u), as_vector(v)
    _check_same_dim(u, v)
    return float(u @ v)


def pairwise_sq_euclidean(a, b=None):
    """All squared distances between rows of ``a`` and rows of ``b``.

    Uses the Gram expansion and clips tiny negatives produced by round-off.
    """
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sa = np.einsum("ij,ij->i", a, a)
    sb = np.einsum("ij,ij->i", b, b)
    d = sa[:, None] + sb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d
