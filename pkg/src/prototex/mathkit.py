"""Dense math kernels shared by the whole engine.

Everything here is a pure function over float64 arrays: squared-L2 distance
matrices, per-row instance normalization, masked minima, and a stable softmax.
Gradients are not computed here; the loss module derives them by hand.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRowError, EmptySelectionError, ShapeError

# Row chunking bound for the broadcasted distance computation (elements of the
# n_chunk * m * d intermediate).  Chunking never changes results: each output
# entry is reduced over the same length-d vector either way.
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class DistanceMatrix:
    """An n*m matrix of squared L2 distances plus a participation mask.

    ``mask[i, j]`` is True when entry ``(i, j)`` takes part in reductions and
    normalization statistics.  Excluding entries through the mask is how
    class-restricted distance computations are expressed without ever feeding
    infinities into means or variances.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ShapeError(f"distance values must be 2-D, got shape {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise ShapeError(
                f"mask shape {self.mask.shape} != values shape {self.values.shape}"
            )

    @classmethod
    def dense(cls, values: np.ndarray) -> "DistanceMatrix":
        """Wrap a matrix with an all-true mask."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def squared_l2_distance_matrix(X: np.ndarray, P: np.ndarray) -> DistanceMatrix:
    """Pairwise squared L2 distances between rows of X (n*d) and rows of P (m*d).

    Computed from explicit differences, not the expanded dot-product identity,
    so identical rows give exactly 0 and no entry can go negative.
    """
    values = squared_l2_dense(X, P)
    return DistanceMatrix.dense(values)


def squared_l2_dense(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Like :func:`squared_l2_distance_matrix` but returning a bare ndarray."""
    X = np.asarray(X, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if X.ndim != 2 or P.ndim != 2:
        raise ShapeError(f"expected 2-D operands, got {X.shape} and {P.shape}")
    if X.shape[1] != P.shape[1]:
        raise ShapeError(
            f"column mismatch: X has {X.shape[1]} columns, P has {P.shape[1]}"
        )
    n, d = X.shape
    m = P.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    step = max(1, _CHUNK_ELEMENTS // max(1, m * d))
    for start in range(0, n, step):
        stop = min(n, start + step)
        diff = X[start:stop, None, :] - P[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _rowwise_standardize(values: np.ndarray, epsilon: float):
    """Standardize every row of a dense matrix (population variance).

    Returns ``(out, inv_std, standardized)`` where the last two feed the
    hand-derived backward pass in the loss module.  A single-column matrix is
    passed through untouched (variance is undefined there) and signalled with
    ``None`` statistics.
    """
    if values.shape[1] == 1:
        return values.copy(), None, None
    mean = values.mean(axis=1, keepdims=True)
    var = values.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    out = (values - mean) * inv
    return out, inv, out


def instance_normalize(D: DistanceMatrix, epsilon: float = 1e-5) -> DistanceMatrix:
    """Per-row standardization of a distance matrix over its unmasked entries.

    Each row is centered and scaled by the population standard deviation of its
    unmasked entries (damped by ``epsilon``).  Masked entries are left exactly
    as they were and contribute nothing to the statistics.  A row with a single
    unmasked entry passes through unchanged; a row with none is an error.
    """
    values, mask = D.values, D.mask
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        row = int(np.flatnonzero(counts == 0)[0])
        raise EmptyRowError(f"row {row} has no unmasked entries to normalize over")

    if mask.all():
        out, _, _ = _rowwise_standardize(values, epsilon)
        return DistanceMatrix(out, mask.copy())

    out = values.copy()
    active = counts >= 2
    if np.any(active):
        filled = np.where(mask, values, 0.0)
        mean = filled.sum(axis=1) / counts
        centered = np.where(mask, values - mean[:, None], 0.0)
        var = (centered**2).sum(axis=1) / counts
        inv = 1.0 / np.sqrt(var + epsilon)
        normalized = centered * inv[:, None]
        out[active] = np.where(mask[active], normalized[active], values[active])
    return DistanceMatrix(out, mask.copy())


def masked_min(row: np.ndarray, mask: np.ndarray) -> tuple[float, int]:
    """Minimum over the unmasked entries of a vector, with its index.

    Ties break toward the lowest index so that downstream gradient routing is
    deterministic.
    """
    row = np.asarray(row, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if row.ndim != 1 or mask.shape != row.shape:
        raise ShapeError(f"expected matching 1-D row and mask, got {row.shape} and {mask.shape}")
    if not mask.any():
        raise EmptySelectionError("all entries are masked; no minimum exists")
    filled = np.where(mask, row, np.inf)
    idx = int(np.argmin(filled))
    return float(row[idx]), idx


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtraction form)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)
