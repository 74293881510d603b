"""Loss terms, their analytic gradients, and a finite-difference verifier.

Three loss modes mirror the training phases:

- ``SimpleLoss``: cross-entropy on the classifier output plus both prototype
  clustering terms on raw distances, everything updated jointly.
- ``PrototypePhase``: the prototype-attraction term alone, computed on the
  distances between one class's batch examples and that class's prototypes.
- ``ClassifyPhase``: cross-entropy over the full prototype set plus a weighted
  example-attraction term on the class-restricted distances.

``backward`` returns exact gradients for every parameter the selected loss
expression touches; the training loop decides which groups actually step.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptySelectionError, LabelError, ShapeError
from .mathkit import DistanceMatrix, _rowwise_standardize, masked_min, softmax, squared_l2_dense
from .model import PrototypeHead

LOG_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    p1: float
    p2: float
    total: float
    lambda1: float
    lambda2: float


@dataclass
class GradientSet:
    d_projection: np.ndarray
    d_prototypes: np.ndarray
    d_linear: np.ndarray


@dataclass(frozen=True)
class SimpleLoss:
    """Joint objective: ce + lambda1 * p1 + lambda2 * p2 (clustering on raw distances)."""

    lambda1: float = 0.9
    lambda2: float = 0.9


@dataclass(frozen=True)
class PrototypePhase:
    """Prototype-attraction step for one class; only that class's rows may move."""

    target_class: int


@dataclass(frozen=True)
class ClassifyPhase:
    """Classifier step: full-batch ce + lam * example-attraction on one class."""

    target_class: int
    lam: float = 2.0


LossMode = SimpleLoss | PrototypePhase | ClassifyPhase


def cross_entropy_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class, log clamped at 1e-12."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2:
        raise ShapeError(f"probabilities must be 2-D, got shape {p.shape}")
    n, k = p.shape
    if y.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {y.shape}")
    if n and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    true_p = p[np.arange(n), y]
    return float(np.mean(-np.log(np.maximum(true_p, LOG_FLOOR))))


def loss_p1(D: DistanceMatrix) -> float:
    """Mean over selected prototype columns of the closest selected example.

    Fully-masked columns are treated as unselected and skipped; the error
    fires only when no column has an unmasked entry.
    """
    n, m = D.shape
    col_counts = D.mask.sum(axis=0)
    selected = np.flatnonzero(col_counts > 0)
    if selected.size == 0:
        raise EmptySelectionError("no prototype column has an unmasked entry")
    total = 0.0
    for j in selected:
        value, _ = masked_min(D.values[:, j], D.mask[:, j])
        total += value
    return total / selected.size


def loss_p2(D: DistanceMatrix) -> float:
    """Mean over selected example rows of the closest selected prototype.

    Fully-masked rows are skipped as unselected, mirroring loss_p1.
    """
    n, m = D.shape
    row_counts = D.mask.sum(axis=1)
    selected = np.flatnonzero(row_counts > 0)
    if selected.size == 0:
        raise EmptySelectionError("no example row has an unmasked entry")
    total = 0.0
    for i in selected:
        value, _ = masked_min(D.values[i], D.mask[i])
        total += value
    return total / selected.size


def total_loss(ce: float, p1: float, p2: float, lambda1: float, lambda2: float) -> LossBreakdown:
    return LossBreakdown(
        ce=ce,
        p1=p1,
        p2=p2,
        total=ce + lambda1 * p1 + lambda2 * p2,
        lambda1=lambda1,
        lambda2=lambda2,
    )


def _distance_vjp(G: np.ndarray, Z: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull a cotangent on the squared-distance matrix back to Z and P.

    d[i,j] = ||z_i - p_j||^2, so dz_i = 2 sum_j G[i,j] (z_i - p_j) and
    dp_j = 2 sum_i G[i,j] (p_j - z_i); both expressed as matmuls.
    """
    dZ = 2.0 * (G.sum(axis=1, keepdims=True) * Z - G @ P)
    dP = 2.0 * (G.sum(axis=0)[:, None] * P - G.T @ Z)
    return dZ, dP


def _standardize_vjp(g: np.ndarray, inv, xhat) -> np.ndarray:
    """Backward of row-wise standardization; identity for the pass-through case."""
    if inv is None:
        return g.copy()
    g_mean = g.mean(axis=1, keepdims=True)
    gx_mean = (g * xhat).mean(axis=1, keepdims=True)
    return inv * (g - g_mean - xhat * gx_mean)


def _column_min_routing(values: np.ndarray, scale: float) -> tuple[float, np.ndarray]:
    """Mean of per-column minima and the subgradient routed to each argmin."""
    n, m = values.shape
    idx = np.argmin(values, axis=0)
    G = np.zeros_like(values)
    G[idx, np.arange(m)] = scale / m
    return float(values[idx, np.arange(m)].sum() / m), G


def _row_min_routing(values: np.ndarray, scale: float) -> tuple[float, np.ndarray]:
    """Mean of per-row minima and the subgradient routed to each argmin."""
    n, m = values.shape
    idx = np.argmin(values, axis=1)
    G = np.zeros_like(values)
    G[np.arange(n), idx] = scale / n
    return float(values[np.arange(n), idx].sum() / n), G


def _class_block(head: PrototypeHead, labels: np.ndarray, target_class: int):
    rows = np.flatnonzero(np.asarray(labels) == target_class)
    cols = head.class_rows(target_class)
    if cols.size == 0:
        raise EmptySelectionError(f"no prototypes carry class {target_class}")
    return rows, cols


def _ce_piece(head: PrototypeHead, Z: np.ndarray, labels: np.ndarray):
    """Forward + backward of the cross-entropy path, up to the raw distances.

    Returns (ce, raw, G_raw, d_linear): the loss, the raw distance matrix,
    its cotangent, and the gradient of the classifier weights.
    """
    n = Z.shape[0]
    raw = squared_l2_dense(Z, head.prototypes)
    if head.normalize_distances:
        dn, inv, xhat = _rowwise_standardize(raw, head.epsilon)
    else:
        dn, inv, xhat = raw, None, None
    logits = dn @ head.linear_weights.T
    probs = softmax(logits, axis=1)
    ce = cross_entropy_loss(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    dlogits = (probs - onehot) / n
    # Rows whose true-class probability sits at the log floor contribute a
    # constant loss, so they must contribute no gradient either.
    dlogits[probs[np.arange(n), labels] <= LOG_FLOOR] = 0.0
    d_linear = dlogits.T @ dn
    g_dn = dlogits @ head.linear_weights
    if head.normalize_distances:
        G_raw = _standardize_vjp(g_dn, inv, xhat)
    else:
        G_raw = g_dn
    return ce, raw, G_raw, d_linear


def _restricted_min_piece(
    head: PrototypeHead,
    Z: np.ndarray,
    labels: np.ndarray,
    target_class: int,
    axis: str,
    scale: float,
):
    """Loss and distance-cotangent for a class-restricted min term.

    ``axis="col"`` attracts prototypes toward their nearest example (per
    prototype column); ``axis="row"`` attracts examples toward their nearest
    prototype (per example row). The distances cover only ``target_class``
    examples and prototypes; normalization follows the head's flag with the
    single-column pass-through rule.
    """
    rows, cols = _class_block(head, labels, target_class)
    if rows.size == 0:
        raise EmptySelectionError(f"batch has no examples of class {target_class}")
    Zc = Z[rows]
    Pc = head.prototypes[cols]
    dc = squared_l2_dense(Zc, Pc)
    if head.normalize_distances:
        ndc, inv, xhat = _rowwise_standardize(dc, head.epsilon)
    else:
        ndc, inv, xhat = dc, None, None
    if axis == "col":
        value, G_nd = _column_min_routing(ndc, scale)
    else:
        value, G_nd = _row_min_routing(ndc, scale)
    if head.normalize_distances:
        G_dc = _standardize_vjp(G_nd, inv, xhat)
    else:
        G_dc = G_nd
    dZc, dPc = _distance_vjp(G_dc, Zc, Pc)
    dZ = np.zeros_like(Z)
    dZ[rows] = dZc
    dP = np.zeros_like(head.prototypes)
    dP[cols] = dPc
    return value, dZ, dP


def evaluate_loss(
    head: PrototypeHead, X: np.ndarray, labels: np.ndarray, mode: LossMode
) -> LossBreakdown:
    """Loss value only, sharing every code path with backward."""
    breakdown, _ = _loss_and_grads(head, X, labels, mode)
    return breakdown


def backward(
    head: PrototypeHead, X: np.ndarray, labels: np.ndarray, mode: LossMode
) -> tuple[LossBreakdown, GradientSet]:
    return _loss_and_grads(head, X, labels, mode)


def _loss_and_grads(head, X, labels, mode):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[1] != head.embed_dim:
        raise ShapeError(f"expected input of shape (n, {head.embed_dim}), got {X.shape}")
    Z = X @ head.projection

    if isinstance(mode, SimpleLoss):
        ce, raw, G_raw, d_linear = _ce_piece(head, Z, labels)
        p1, G_p1 = _column_min_routing(raw, mode.lambda1)
        p2, G_p2 = _row_min_routing(raw, mode.lambda2)
        G_total = G_raw + G_p1 + G_p2
        dZ, dP = _distance_vjp(G_total, Z, head.prototypes)
        breakdown = total_loss(ce, p1, p2, mode.lambda1, mode.lambda2)
        grads = GradientSet(
            d_projection=X.T @ dZ, d_prototypes=dP, d_linear=d_linear
        )
        return breakdown, grads

    if isinstance(mode, PrototypePhase):
        p1, dZ, dP = _restricted_min_piece(
            head, Z, labels, mode.target_class, axis="col", scale=1.0
        )
        breakdown = LossBreakdown(
            ce=0.0, p1=p1, p2=0.0, total=p1, lambda1=1.0, lambda2=0.0
        )
        grads = GradientSet(
            d_projection=X.T @ dZ,
            d_prototypes=dP,
            d_linear=np.zeros_like(head.linear_weights),
        )
        return breakdown, grads

    if isinstance(mode, ClassifyPhase):
        ce, raw, G_raw, d_linear = _ce_piece(head, Z, labels)
        dZ_ce, dP_ce = _distance_vjp(G_raw, Z, head.prototypes)
        rows = np.flatnonzero(labels == mode.target_class)
        if rows.size:
            p2, dZ_p2, dP_p2 = _restricted_min_piece(
                head, Z, labels, mode.target_class, axis="row", scale=mode.lam
            )
            dZ = dZ_ce + dZ_p2
            dP = dP_ce + dP_p2
        else:
            # No examples of the alternating class in this batch: the
            # clustering term vanishes and cross-entropy alone drives the step.
            p2 = 0.0
            dZ, dP = dZ_ce, dP_ce
        breakdown = LossBreakdown(
            ce=ce, p1=0.0, p2=p2, total=ce + mode.lam * p2, lambda1=0.0, lambda2=mode.lam
        )
        grads = GradientSet(d_projection=X.T @ dZ, d_prototypes=dP, d_linear=d_linear)
        return breakdown, grads

    raise TypeError(f"unknown loss mode {mode!r}")


def finite_diff_check(
    head: PrototypeHead,
    X: np.ndarray,
    labels: np.ndarray,
    mode: LossMode,
    h: float = 1e-4,
    analytic: GradientSet | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8) so flat
    regions compare cleanly. Passing ``analytic`` lets a test inject a
    corrupted gradient and confirm the check catches it.
    """
    if analytic is None:
        _, analytic = backward(head, X, labels, mode)
    pairs = [
        (head.projection, analytic.d_projection),
        (head.prototypes, analytic.d_prototypes),
        (head.linear_weights, analytic.d_linear),
    ]
    worst = 0.0
    for param, grad in pairs:
        flat = param.ravel()
        for idx in range(flat.size):
            kept = flat[idx]
            flat[idx] = kept + h
            up = evaluate_loss(head, X, labels, mode).total
            flat[idx] = kept - h
            down = evaluate_loss(head, X, labels, mode).total
            flat[idx] = kept
            numeric = (up - down) / (2.0 * h)
            a = grad.ravel()[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
