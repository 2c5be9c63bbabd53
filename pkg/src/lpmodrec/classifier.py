"""One-vs-rest linear soft-margin SVM on standardized features.

Each binary problem minimizes ``0.5 |w|^2 + C sum_i hinge(y_i (w.x_i + b))``
by dual coordinate descent with a seeded visiting order; the bias enters as
an extra constant feature.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .errors import (
    ConfigError,
    DegenerateLabels,
    DimensionMismatch,
    FormatError,
    TagMismatch,
    TooFewExamples,
)
from .features import FeatureTag, FeatureVector

C_GRID = (0.01, 0.1, 1.0, 10.0)
DEFAULT_C = 1.0
MAX_EPOCHS = 1000
TOLERANCE = 1e-2
VALIDATION_FRACTION = 0.2
_STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SvmModel:
    classes: tuple
    weights: np.ndarray  # (n_classes, dim)
    biases: np.ndarray  # (n_classes,)
    C: float
    feature_tag: FeatureTag | None
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.scaler_mean) / self.scaler_std


@dataclass(frozen=True, eq=False)
class EvalReport:
    classes: tuple
    confusion: np.ndarray  # rows: true class, columns: predicted class
    folds: int = 1

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def per_class_accuracy(self) -> dict:
        rows = self.confusion.sum(axis=1)
        return {c: (float(self.confusion[i, i] / rows[i]) if rows[i] else float("nan"))
                for i, c in enumerate(self.classes)}


def _unwrap(features) -> tuple[np.ndarray, FeatureTag | None]:
    if isinstance(features, FeatureVector):
        return features.values[None, :], features.tag
    if isinstance(features, (list, tuple)) and features and isinstance(features[0], FeatureVector):
        tags = {f.tag for f in features}
        if len(tags) != 1:
            raise TagMismatch(f"mixed feature tags {sorted(t.value for t in tags)}")
        dims = {len(f) for f in features}
        if len(dims) != 1:
            raise DimensionMismatch(f"feature vectors of differing lengths {sorted(dims)}")
        return np.stack([f.values for f in features]), tags.pop()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D feature matrix, got shape {X.shape}")
    return X, None


def _fit_binary(Xa: np.ndarray, y: np.ndarray, C: float, rng: np.random.Generator,
                kernels, max_epochs: int, tol: float) -> tuple[np.ndarray, int]:
    n, dim = Xa.shape
    alpha = np.zeros(n)
    w = np.zeros(dim)
    qdiag = np.einsum("ij,ij->i", Xa, Xa)
    active = np.ones(n, dtype=np.uint8)
    pg_max_old, pg_min_old = np.inf, -np.inf
    for epoch in range(1, max_epochs + 1):
        idx = np.flatnonzero(active)
        order = idx[rng.permutation(idx.size)].astype(np.int64)
        pg_max, pg_min = kernels.dual_cd_epoch_shrink(Xa, y, alpha, w, qdiag, C, order, active,
                                                      pg_max_old, pg_min_old)
        if pg_max - pg_min < tol:
            if idx.size == n:
                break
            # converged on the active set; recheck every coordinate
            active[:] = 1
            pg_max_old, pg_min_old = np.inf, -np.inf
            continue
        pg_max_old = pg_max if pg_max > 0 else np.inf
        pg_min_old = pg_min if pg_min < 0 else -np.inf
    return w, epoch


def _fit_ovr(Xs: np.ndarray, y_idx: np.ndarray, n_classes: int, C: float, seed: int,
             kernels, max_epochs: int, tol: float):
    Xa = np.ascontiguousarray(np.hstack([Xs, np.ones((Xs.shape[0], 1))]))
    W = np.zeros((n_classes, Xs.shape[1]))
    b = np.zeros(n_classes)
    epochs = []
    for c in range(n_classes):
        rng = np.random.default_rng([seed, c])
        yc = np.where(y_idx == c, 1.0, -1.0)
        w, ep = _fit_binary(Xa, yc, C, rng, kernels, max_epochs, tol)
        W[c], b[c] = w[:-1], w[-1]
        epochs.append(ep)
    return W, b, epochs


def _stratified_holdout(y_idx: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    mask = np.zeros(y_idx.shape[0], dtype=bool)
    for c in np.unique(y_idx):
        idx = np.flatnonzero(y_idx == c)
        n_val = max(1, int(round(fraction * idx.size)))
        mask[rng.permutation(idx)[:n_val]] = True
    return mask


def _hash_data(X: np.ndarray, labels: Sequence) -> str:
    h = hashlib.sha256(np.ascontiguousarray(X).tobytes())
    h.update("\x1f".join(map(_label_str, labels)).encode())
    return h.hexdigest()[:16]


def train_svm(features, labels: Sequence, C: float | str = DEFAULT_C, seed: int = 0, *,
              tag: FeatureTag | str | None = None, classes: Sequence | None = None,
              c_grid: Sequence[float] = C_GRID, max_epochs: int = MAX_EPOCHS,
              tol: float = TOLERANCE, kernels=None, standardize: bool = True) -> SvmModel:
    """Standardize, then fit one binary SVM per class.

    ``standardize=False`` keeps the raw feature scale (identity scaler) so
    the effect of standardization can be measured.

    ``C="auto"`` picks the best value of ``c_grid`` on a stratified inner
    validation split (ties go to the smaller C) and refits on all data.
    """
    X, found_tag = _unwrap(features)
    if tag is not None and found_tag is not None and FeatureTag.parse(tag) is not found_tag:
        raise TagMismatch(f"features tagged {found_tag.value}, expected {FeatureTag.parse(tag).value}")
    tag = found_tag or (FeatureTag.parse(tag) if tag is not None else None)
    labels = list(labels)
    if len(labels) != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {len(labels)} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or Inf")
    classes = tuple(classes) if classes is not None else tuple(sorted(set(labels), key=str))
    if len(set(labels)) < 2:
        raise DegenerateLabels("need at least two classes to train")
    index = {c: i for i, c in enumerate(classes)}
    try:
        y_idx = np.array([index[v] for v in labels])
    except KeyError as exc:
        raise ConfigError(f"label {exc.args[0]!r} not among declared classes") from exc
    counts = np.bincount(y_idx, minlength=len(classes))
    if np.any(counts[counts > 0] < 2):
        raise TooFewExamples("every class needs at least two examples")
    k = kernels or _backend.kernels

    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > _STD_FLOOR, std, 1.0)
    else:
        mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xs = (X - mean) / std

    chosen = C
    scores = {}
    if isinstance(C, str):
        if C != "auto":
            raise ConfigError(f"C must be positive or 'auto', got {C!r}")
        val = _stratified_holdout(y_idx, VALIDATION_FRACTION, seed)
        tr = ~val
        Xtr, Xval = Xs[tr], Xs[val]
        if standardize:
            # inner split re-standardizes on its own training part
            m_in = Xs[tr].mean(axis=0)
            s_in = Xs[tr].std(axis=0)
            s_in = np.where(s_in > _STD_FLOOR, s_in, 1.0)
            Xtr, Xval = (Xtr - m_in) / s_in, (Xval - m_in) / s_in
        for c_val in c_grid:
            W, b, _ = _fit_ovr(Xtr, y_idx[tr], len(classes), c_val, seed, k, max_epochs, tol)
            pred = np.argmax(Xval @ W.T + b, axis=1)
            scores[c_val] = float(np.mean(pred == y_idx[val]))
        best = max(scores.values())
        chosen = min(c for c, s in scores.items() if s == best)
    chosen = float(chosen)
    if not chosen > 0:
        raise ConfigError("C must be positive")

    W, b, epochs = _fit_ovr(Xs, y_idx, len(classes), chosen, seed, k, max_epochs, tol)
    provenance = {
        "seed": int(seed),
        "n_train": int(X.shape[0]),
        "data_hash": _hash_data(X, labels),
        "epochs": epochs,
        "c_scores": {repr(c): s for c, s in scores.items()},
    }
    return SvmModel(classes, W, b, chosen, tag, mean, std, provenance)


def decision_function(model: SvmModel, features) -> np.ndarray:
    X, tag = _unwrap(features)
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"model expects {model.dim} features, got {X.shape[1]}")
    if tag is not None and model.feature_tag is not None and tag is not model.feature_tag:
        raise TagMismatch(f"model trained on {model.feature_tag.value}, got {tag.value}")
    return model.standardize(X) @ model.weights.T + model.biases


def predict(model: SvmModel, features):
    """Labels and per-class decision values (columns in ``model.classes`` order).

    Ties resolve to the earliest class.  A single vector gives a scalar label
    and a 1-D array of decision values.
    """
    if isinstance(features, FeatureVector):
        single = True
    elif isinstance(features, (list, tuple)) and features and isinstance(features[0], FeatureVector):
        single = False
    else:
        single = np.ndim(features) == 1
    scores = decision_function(model, features)
    idx = np.argmax(scores, axis=1)
    labels = [model.classes[i] for i in idx]
    if single:
        return labels[0], scores[0]
    return labels, scores


def confusion_matrix(true, pred, classes: Sequence) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[index[t], index[p]] += 1
    return cm


def evaluate(model: SvmModel, features, labels: Sequence) -> EvalReport:
    pred, _ = predict(model, np.atleast_2d(_unwrap(features)[0]))
    return EvalReport(model.classes, confusion_matrix(labels, pred, model.classes))


def stratified_folds(labels: Sequence, k: int, seed: int) -> list[np.ndarray]:
    """Test-index arrays of a seeded stratified k-fold split."""
    from sklearn.model_selection import StratifiedKFold

    y = np.array([str(v) for v in labels])
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed % 2**32)
    return [test for _, test in skf.split(np.zeros(y.size), y)]


def kfold_evaluate(features, labels: Sequence, k: int = 10, seed: int = 0,
                   C: float | str = DEFAULT_C, **train_kwargs) -> EvalReport:
    X, tag = _unwrap(features)
    tag = train_kwargs.pop("tag", tag)
    labels = list(labels)
    if k < 2:
        raise ConfigError("k-fold evaluation needs k >= 2")
    classes = tuple(sorted(set(labels), key=str))
    counts = {c: labels.count(c) for c in classes}
    if min(counts.values()) < k:
        raise TooFewExamples(f"each class needs at least k={k} examples, have {counts}")
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    lab = np.array(labels, dtype=object)
    for f, test in enumerate(stratified_folds(labels, k, seed)):
        train = np.setdiff1d(np.arange(len(labels)), test)
        model = train_svm(X[train], list(lab[train]), C, seed + f, tag=tag, classes=classes,
                          **train_kwargs)
        pred, _ = predict(model, X[test])
        cm += confusion_matrix(lab[test], pred, classes)
    return EvalReport(classes, cm, folds=k)


# ---------------------------------------------------------------------------
# persistence


def _label_str(label) -> str:
    return label.value if isinstance(label, enum.Enum) else str(label)


def save_model(model: SvmModel, path) -> Path:
    path = Path(path)
    meta = {
        "format": "lpmodrec-svm",
        "version": 1,
        "classes": [_label_str(c) for c in model.classes],
        "C": model.C,
        "feature_tag": model.feature_tag.value if model.feature_tag else None,
        "provenance": model.provenance,
    }
    with open(path, "wb") as fh:
        np.savez(fh, weights=model.weights, biases=model.biases, scaler_mean=model.scaler_mean,
                 scaler_std=model.scaler_std, meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_model(path) -> SvmModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "lpmodrec-svm":
                raise FormatError(f"{path}: not an SVM model file")
            tag = FeatureTag.parse(meta["feature_tag"]) if meta["feature_tag"] else None
            return SvmModel(tuple(meta["classes"]), z["weights"], z["biases"], float(meta["C"]),
                            tag, z["scaler_mean"], z["scaler_std"], meta.get("provenance", {}))
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
