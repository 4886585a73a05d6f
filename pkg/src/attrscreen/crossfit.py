"""Out-of-fold attribute predictions.

The built-in predictor is multinomial logistic regression fit by full-batch
gradient descent on class-balanced cross-entropy, with the best epoch chosen
on a held-out validation slice. Externally produced predictions can be
wrapped into the same result type.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .table import AuditTable, FoldAssignment, Role, SchemaError, stratified_split

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    val_fraction: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class PredictorModel:
    """Linear softmax classifier on raw (unstandardized) features."""

    weights: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)
    active: np.ndarray  # classes seen in training
    epochs_run: int
    best_epoch: int
    val_loss: float

    @property
    def n_classes(self) -> int:
        return self.bias.size

    def logits(self, X) -> np.ndarray:
        z = np.asarray(X, dtype=float) @ self.weights.T + self.bias
        return np.where(self.active, z, -np.inf)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)


def balanced_weights(y, n_classes: int) -> np.ndarray:
    """Per-row weights proportional to the inverse frequency of the row's class."""
    y = np.asarray(y, dtype=np.int64)
    freq = np.bincount(y, minlength=n_classes).astype(float)
    per_class = np.divide(1.0, freq, out=np.zeros(n_classes), where=freq > 0)
    return per_class[y]


def weighted_cross_entropy(weights, bias, X, y, sample_weight=None) -> float:
    """Mean cross-entropy with per-row weights, normalized by their sum."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(y.size) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    logp = log_softmax(X @ np.asarray(weights).T + bias, axis=1)
    return float(-np.sum(w * logp[np.arange(y.size), y]) / w.sum())


def train_baseline(X_train, y_train, X_val=None, y_val=None, config: TrainConfig = TrainConfig(),
                   n_classes: int | None = None) -> PredictorModel:
    """Fit the baseline classifier and return its best-validation epoch.

    Features are standardized on the training rows for the descent and the
    scaling is folded back into the returned parameters. Without validation
    rows the training loss picks the epoch. Zero initialisation makes the fit
    a deterministic function of the data.
    """
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(y_train, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X_train must be (n, d) with one label per row")
    K = int(y.max()) + 1 if n_classes is None else int(n_classes)
    present = np.bincount(y, minlength=K) > 0
    if present.sum() < 2:
        raise TrainingError("training rows contain a single class")
    if X_val is None or len(X_val) == 0:
        X_val, y_val = X, y
    Xv = np.asarray(X_val, dtype=float)
    yv = np.asarray(y_val, dtype=np.int64)

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    Xvs = (Xv - mean) / scale

    w_tr = balanced_weights(y, K)
    w_tr /= w_tr.sum()
    w_va = balanced_weights(yv, K)
    onehot = np.zeros((y.size, K))
    onehot[np.arange(y.size), y] = 1.0
    mask = np.where(present, 0.0, -np.inf)

    W = np.zeros((K, X.shape[1]))
    b = np.zeros(K)
    best = (np.inf, W.copy(), b.copy(), 0)
    stall = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        logits = Xs @ W.T + b + mask
        P = softmax(logits, axis=1)
        G = (P - onehot) * w_tr[:, None]
        W -= config.lr * (G.T @ Xs)
        b -= config.lr * G.sum(axis=0)
        b[~present] = 0.0
        val_loss = _masked_loss(W, b + mask, Xvs, yv, w_va)
        if not np.isfinite(val_loss) or not np.all(np.isfinite(W)):
            raise TrainingError(f"non-finite loss at epoch {epoch} (lr={config.lr})")
        if val_loss < best[0] - 1e-12:
            best = (val_loss, W.copy(), b.copy(), epoch)
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    val_loss, W, b, best_epoch = best
    W_raw = W / scale
    b_raw = b - W_raw @ mean
    return PredictorModel(W_raw, b_raw, present, epoch, best_epoch, float(val_loss))


def _masked_loss(W, b, X, y, w) -> float:
    logp = log_softmax(X @ W.T + b, axis=1)
    picked = logp[np.arange(y.size), y]
    keep = w > 0
    if np.any(np.isneginf(picked[keep])):
        # validation rows of a class absent from training
        picked = np.where(np.isneginf(picked), -50.0, picked)
    return float(-np.sum(w[keep] * picked[keep]) / w[keep].sum())


@dataclass
class CrossFitResult:
    ahat: np.ndarray
    scores: np.ndarray  # (n, K) class probabilities
    fold_of_row: np.ndarray
    provenance: str = "crossfit"
    splits: list = field(default_factory=list, repr=False)  # (train, val, test) per fold
    extra_scores: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)

    def check_out_of_fold(self) -> None:
        """Assert coverage and that no row was predicted by a model that saw it."""
        n = self.ahat.size
        seen = np.zeros(n, dtype=np.int64)
        for train, val, test in self.splits:
            fit_rows = np.union1d(train, val)
            assert np.intersect1d(fit_rows, test).size == 0, "prediction from a model trained on the row"
            seen[test] += 1
        if self.splits:
            assert np.all(seen == 1), "every row must be predicted exactly once"
        np.testing.assert_allclose(self.scores.sum(axis=1), 1.0, atol=1e-9)


def crossfit_arrays(X, target, folds: FoldAssignment, config: TrainConfig = TrainConfig(),
                    n_classes: int | None = None, extra_features=()) -> CrossFitResult:
    """Cross-fitted predictions of ``target`` from ``X``.

    Each fold is predicted by a model fit on the remaining folds, split
    90:10 (stratified by target class) into fit and validation rows.
    ``extra_features`` are alternative feature matrices for the same rows
    (e.g. counterfactual versions); each row of them is scored by that row's
    out-of-fold model.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=np.int64)
    K = int(target.max()) + 1 if n_classes is None else int(n_classes)
    n = target.size
    if folds.fold_id.size != n:
        raise ValueError("fold assignment does not match the row count")
    scores = np.zeros((n, K))
    extras = [np.zeros((n, K)) for _ in extra_features]
    splits, warnings = [], []
    for f in range(folds.k):
        test = folds.indices(f)
        rest = np.flatnonzero(folds.fold_id != f)
        if test.size == 0:
            continue
        absent = np.flatnonzero(np.bincount(target[rest], minlength=K) == 0)
        if absent.size:
            msg = f"fold {f}: classes {absent.tolist()} absent from training rows and never predicted"
            logger.warning(msg)
            warnings.append(msg)
        fit_pos, val_pos = stratified_split(target[rest], config.val_fraction, seed=(config.seed, f))
        train, val = rest[fit_pos], rest[val_pos]
        model = train_baseline(X[train], target[train], X[val], target[val], config, n_classes=K)
        scores[test] = model.predict_proba(X[test])
        for out, Xe in zip(extras, extra_features):
            out[test] = model.predict_proba(np.asarray(Xe, dtype=float)[test])
        splits.append((train, val, test))
    result = CrossFitResult(np.argmax(scores, axis=1), scores, folds.fold_id.copy(), "crossfit",
                            splits, extras, warnings)
    result.check_out_of_fold()
    return result


def crossfit_predict(table: AuditTable, attribute: str, folds: FoldAssignment,
                     config: TrainConfig = TrainConfig(), features=None) -> CrossFitResult:
    """Cross-fitted predictions of an attribute from the table's feature columns."""
    X = table.features(features)
    if X.shape[1] == 0:
        raise SchemaError("cross-fitting needs at least one feature column")
    K = table.codecs[attribute].n_categories
    return crossfit_arrays(X, table.codes[attribute], folds, config, n_classes=K)


def _from_probabilities(probs: np.ndarray) -> CrossFitResult:
    if np.any(probs < 0) or np.any(probs.sum(axis=1) <= 0):
        raise SchemaError("probability columns must be non-negative with a positive row sum")
    probs = probs / probs.sum(axis=1, keepdims=True)
    return CrossFitResult(np.argmax(probs, axis=1), probs, np.full(probs.shape[0], -1), "external")


def _from_labels(labels, codec) -> CrossFitResult:
    codes = codec.encode(labels)
    scores = np.zeros((codes.size, codec.n_categories))
    scores[np.arange(codes.size), codes] = 1.0
    return CrossFitResult(codes, scores, np.full(codes.size, -1), "external")


def external_predictions(table: AuditTable, attribute: str, column: str | None = None) -> CrossFitResult:
    """Wrap prediction columns already present in the table.

    With ``column`` naming a hard-prediction column, its values are mapped
    into the attribute's categories. Otherwise the attribute's probability
    columns (one per category) are argmaxed.
    """
    codec = table.codecs[attribute]
    if column is not None:
        role = table.roles.get(column)
        if role is None or role.role is not Role.PREDICTION or role.class_value is not None:
            raise SchemaError(f"{column!r} is not a hard prediction column")
        values = table.codecs[column].decode(table.codes[column])
        return _from_labels(values, codec)
    prob_cols = {table.roles[c].class_value: c for c in table.prediction_columns(attribute)
                 if table.roles[c].class_value is not None}
    if not prob_cols:
        hard = [c for c in table.prediction_columns(attribute) if table.roles[c].class_value is None]
        if len(hard) == 1:
            return external_predictions(table, attribute, hard[0])
        raise SchemaError(f"no prediction columns for attribute {attribute!r}")
    unknown = set(prob_cols) - set(codec.categories)
    if unknown:
        raise SchemaError(f"probability columns for unknown categories {sorted(unknown)} of {attribute!r}")
    probs = np.column_stack([table.values[prob_cols[c]] if c in prob_cols else np.zeros(table.n_rows)
                             for c in codec.categories])
    return _from_probabilities(probs)


def load_sidecar(path, table: AuditTable, attribute: str) -> CrossFitResult:
    """Read ``row_id, <attribute>_pred`` or ``row_id, <attribute>_prob_<class>...``.

    Every table row must appear in the sidecar, keyed by its row id.
    """
    path = Path(path)
    codec = table.codecs[attribute]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "row_id" not in header:
            raise SchemaError(f"{path}: sidecar lacks a row_id column")
        rows = {r["row_id"].strip(): r for r in reader}
    missing = [rid for rid in table.row_ids if rid not in rows]
    if missing:
        raise SchemaError(f"{path}: {len(missing)} table rows have no prediction (e.g. {missing[:3]})")
    ordered = [rows[rid] for rid in table.row_ids]
    pred_col = f"{attribute}_pred"
    prefix = f"{attribute}_prob_"
    if pred_col in header:
        result = _from_labels([r[pred_col].strip() for r in ordered], codec)
    else:
        prob_cols = {h[len(prefix):]: h for h in header if h.startswith(prefix)}
        if not prob_cols:
            raise SchemaError(f"{path}: no {pred_col!r} or {prefix}<class> columns")
        unknown = set(prob_cols) - set(codec.categories)
        if unknown:
            raise SchemaError(f"{path}: probability columns for unknown categories {sorted(unknown)}")
        try:
            probs = np.array([[float(r[prob_cols[c]]) if c in prob_cols else 0.0 for c in codec.categories]
                              for r in ordered])
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        result = _from_probabilities(probs)
    result.provenance = f"sidecar:{path.name}"
    return result
