"""Per-class F1, macro-F1, per-subcategory F1, and a paired bootstrap test."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class EvalResult:
    f1_negative: float
    f1_positive: float
    f1_macro: float
    confusion: dict
    per_subcategory: dict | None = None


def _f1_for_class(predictions: np.ndarray, gold: np.ndarray, cls: int) -> float:
    tp = int(np.sum((predictions == cls) & (gold == cls)))
    fp = int(np.sum((predictions == cls) & (gold != cls)))
    fn = int(np.sum((predictions != cls) & (gold == cls)))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def f1_scores(predictions, gold) -> EvalResult:
    predictions = np.asarray(predictions)
    gold = np.asarray(gold)
    if predictions.shape != gold.shape:
        raise ShapeError(
            f"predictions shape {predictions.shape} != gold shape {gold.shape}"
        )
    f1_neg = _f1_for_class(predictions, gold, 0)
    f1_pos = _f1_for_class(predictions, gold, 1)
    confusion = {
        "tp": int(np.sum((predictions == 1) & (gold == 1))),
        "fp": int(np.sum((predictions == 1) & (gold == 0))),
        "fn": int(np.sum((predictions == 0) & (gold == 1))),
        "tn": int(np.sum((predictions == 0) & (gold == 0))),
    }
    return EvalResult(
        f1_negative=f1_neg,
        f1_positive=f1_pos,
        f1_macro=(f1_neg + f1_pos) / 2.0,
        confusion=confusion,
    )


def macro_f1(predictions, gold) -> float:
    return f1_scores(predictions, gold).f1_macro


def subclass_f1(predictions, gold, subcategories) -> dict[str, float]:
    """Macro-F1 per subcategory, pooling its positives with every negative."""
    predictions = np.asarray(predictions)
    gold = np.asarray(gold)
    if len(subcategories) != predictions.size:
        raise ShapeError(
            f"{len(subcategories)} subcategory tags for {predictions.size} predictions"
        )
    tags = np.array([s if s is not None else "" for s in subcategories])
    neg_idx = np.flatnonzero(gold == 0)
    out: dict[str, float] = {}
    for name in sorted(set(tags[gold == 1]) - {""}):
        sub_idx = np.flatnonzero((gold == 1) & (tags == name))
        if sub_idx.size == 0:
            warnings.warn(f"subcategory {name!r} has no positive examples; omitted")
            continue
        pool = np.concatenate([sub_idx, neg_idx])
        out[name] = f1_scores(predictions[pool], gold[pool]).f1_macro
    return out


def bootstrap_significance(preds_a, preds_b, gold, n_resamples: int = 10000, seed: int = 0) -> float:
    """One-sided paired bootstrap p-value for macro-F1(a) > macro-F1(b).

    Test indices are resampled with replacement; p is the fraction of
    replicates where the a-minus-b difference is <= 0, so identical
    predictions give p = 1.
    """
    preds_a = np.asarray(preds_a)
    preds_b = np.asarray(preds_b)
    gold = np.asarray(gold)
    if not (preds_a.shape == preds_b.shape == gold.shape):
        raise ShapeError("predictions and gold must share one shape")
    n = gold.size
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_resamples, n))

    def replicate_f1(preds):
        # Per-class confusion counts for every replicate at once: gather the
        # per-example indicators, then sum along the resampled axis.
        scores = np.zeros((2, n_resamples))
        for cls in (0, 1):
            tp = ((preds == cls) & (gold == cls)).astype(np.float64)
            fp = ((preds == cls) & (gold != cls)).astype(np.float64)
            fn = ((preds != cls) & (gold == cls)).astype(np.float64)
            tp_r = tp[idx].sum(axis=1)
            fp_r = fp[idx].sum(axis=1)
            fn_r = fn[idx].sum(axis=1)
            denom = 2 * tp_r + fp_r + fn_r
            scores[cls] = np.where(denom > 0, 2 * tp_r / np.maximum(denom, 1.0), 0.0)
        return scores.mean(axis=0)

    diff = replicate_f1(preds_a) - replicate_f1(preds_b)
    return float(np.mean(diff <= 0.0))
