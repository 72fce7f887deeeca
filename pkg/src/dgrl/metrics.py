"""Evaluation metrics and training losses.

Precision/recall/F1 are macro-averaged over all declared classes; a
class absent from the batch contributes 0 to the mean.  acc5/acc10 are
relative-error threshold accuracies: a prediction counts when
|pred - true| <= 0.05|true| (resp. 0.10|true|); exact-zero targets
count only when |pred| <= 1e-12.
"""

import numpy as np

from . import autodiff as ad
from .errors import DegenerateTarget, ShapeMismatch

LOWER_BETTER = "lower_better"
HIGHER_BETTER = "higher_better"

METRIC_DIRECTIONS = {
    "mse": LOWER_BETTER,
    "rmse": LOWER_BETTER,
    "r2": HIGHER_BETTER,
    "accuracy": HIGHER_BETTER,
    "precision": HIGHER_BETTER,
    "recall": HIGHER_BETTER,
    "f1": HIGHER_BETTER,
    "acc5": HIGHER_BETTER,
    "acc10": HIGHER_BETTER,
}

REGRESSION_METRICS = frozenset({"mse", "rmse", "r2", "acc5", "acc10"})
CLASSIFICATION_METRICS = frozenset({"accuracy", "precision", "recall", "f1"})

ZERO_TARGET_TOL = 1e-12


def loss(preds, targets, task):
    """Scalar loss tensor: mean squared error or mean cross-entropy from logits."""
    if task.objective == "regression":
        targets = np.asarray(targets, dtype=np.float64)
        if preds.shape != targets.shape:
            raise ShapeMismatch(
                f"loss: predictions {preds.shape} vs targets {targets.shape}")
        diff = ad.sub(preds, ad.Tensor(targets))
        return ad.tensor_mean(ad.mul(diff, diff))
    targets = np.asarray(targets)
    n, c = preds.shape
    if targets.shape != (n,):
        raise ShapeMismatch(
            f"loss: logits for {n} rows vs {targets.shape[0] if targets.ndim else 1} labels")
    if c != task.num_classes:
        raise ShapeMismatch(f"loss: {c} logit columns for {task.num_classes} classes")
    # log-softmax with a detached row max keeps exp() in range
    row_max = preds.values.max(axis=1, keepdims=True)
    shifted = ad.sub(preds, ad.Tensor(row_max))
    lse = ad.log(ad.tensor_sum(ad.exp(shifted), axis=1, keepdims=True))
    log_probs = ad.sub(shifted, lse)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), targets.astype(np.int64)] = 1.0
    picked = ad.tensor_sum(ad.mul(log_probs, ad.Tensor(onehot)), axis=1)
    return ad.neg(ad.tensor_mean(picked))


def _regression_metrics(preds, targets, wanted):
    p = preds.reshape(-1)
    t = targets.reshape(-1)
    if p.shape != t.shape:
        raise ShapeMismatch(f"metrics: {p.shape} predictions vs {t.shape} targets")
    err = p - t
    out = {}
    mse = float(np.mean(err * err))
    if "mse" in wanted:
        out["mse"] = mse
    if "rmse" in wanted:
        out["rmse"] = float(np.sqrt(mse))
    if "r2" in wanted:
        sst = float(np.sum((t - t.mean()) ** 2))
        if sst == 0.0:
            raise DegenerateTarget("r2 undefined: targets have zero variance")
        out["r2"] = 1.0 - float(np.sum(err * err)) / sst
    for name, rel in (("acc5", 0.05), ("acc10", 0.10)):
        if name not in wanted:
            continue
        zero = np.abs(t) == 0.0
        hit = np.abs(err) <= rel * np.abs(t)
        hit[zero] = np.abs(p[zero]) <= ZERO_TARGET_TOL
        out[name] = float(np.mean(hit))
    return out


def _classification_metrics(preds, targets, num_classes, wanted):
    if preds.ndim == 2:
        pred_cls = preds.argmax(axis=1)
    else:
        pred_cls = preds.astype(np.int64)
    t = targets.astype(np.int64).reshape(-1)
    if pred_cls.shape != t.shape:
        raise ShapeMismatch(f"metrics: {pred_cls.shape} predictions vs {t.shape} targets")
    out = {}
    if "accuracy" in wanted:
        out["accuracy"] = float(np.mean(pred_cls == t))
    if wanted & {"precision", "recall", "f1"}:
        prec = np.zeros(num_classes)
        rec = np.zeros(num_classes)
        f1 = np.zeros(num_classes)
        for c in range(num_classes):
            tp = float(np.sum((pred_cls == c) & (t == c)))
            fp = float(np.sum((pred_cls == c) & (t != c)))
            fn = float(np.sum((pred_cls != c) & (t == c)))
            prec[c] = tp / (tp + fp) if tp + fp > 0 else 0.0
            rec[c] = tp / (tp + fn) if tp + fn > 0 else 0.0
            s = prec[c] + rec[c]
            f1[c] = 2.0 * prec[c] * rec[c] / s if s > 0 else 0.0
        if "precision" in wanted:
            out["precision"] = float(prec.mean())
        if "recall" in wanted:
            out["recall"] = float(rec.mean())
        if "f1" in wanted:
            out["f1"] = float(f1.mean())
    return out


def compute_metrics(preds, targets, task):
    """Evaluate the metrics named in task.metrics; raises DegenerateTarget
    when r2 is requested on zero-variance targets."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.size == 0:
        raise ShapeMismatch("metrics: empty predictions")
    wanted = set(task.metrics)
    if task.objective == "regression":
        vals = _regression_metrics(preds.astype(np.float64),
                                   targets.astype(np.float64), wanted)
    else:
        vals = _classification_metrics(preds, targets, task.num_classes, wanted)
    return {name: vals[name] for name in task.metrics}
