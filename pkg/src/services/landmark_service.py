"""Landmark Detection Service"""

import time
from typing import List, Optional, Sequence, Union

import numpy as np
import structlog
from scipy.special import logsumexp
from sklearn.model_selection import KFold, StratifiedKFold
from sklearn.neighbors import NearestNeighbors

from src.models.landmark import (
    ClassifierSpec,
    CrossValidationResult,
    KnnSpec,
    KStarSpec,
    RoomPosterior,
)
from src.models.sensing import FingerprintDatabase
from src.utils.config import settings

logger = structlog.get_logger()

# Scale search on the effective instance count
NEFF_TOLERANCE = 1e-3
MAX_BISECTIONS = 64
_QUERY_CHUNK = 64


class NeighborIndex:
    """Exact Euclidean neighbour search; equal distances go to the lower row index"""

    def __init__(self, features: np.ndarray):
        self.features = np.asarray(features, dtype=float)
        self._nn = NearestNeighbors(algorithm="brute").fit(self.features)

    def query(self, queries: np.ndarray, k: int) -> np.ndarray:
        """(Q, k) row indices, nearest first"""
        n = self.features.shape[0]
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        # full ranking so ties at the k-th place resolve by index
        dist, ind = self._nn.kneighbors(queries, n_neighbors=n)
        order = np.lexsort((ind, dist), axis=-1)
        return np.take_along_axis(ind, order, axis=-1)[:, :k]


def nearest_indices(features: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows to a single query"""
    return NeighborIndex(features).query(query, k)[0]


def _effective_count(log_p: np.ndarray) -> np.ndarray:
    """(sum p)^2 / sum p^2 along the last axis, computed in log space"""
    return np.exp(2 * logsumexp(log_p, axis=-1) - logsumexp(2 * log_p, axis=-1))


class KStarModel:
    """
    Instance-based classifier with entropic (transformation) similarity

    For every query and attribute the transformation probability to
    training instance i is exp(-|q - a_i| / x0); x0 is chosen by bisection
    so that the effective instance count (sum p)^2 / sum p^2 equals
    1 + blend/100 * (N - 1). Instance similarity is the product over
    attributes; a class scores the sum over its instances.
    """

    def __init__(self, features: np.ndarray, labels: Sequence[str], blend: float):
        if not 0 < blend <= 100:
            raise ValueError(f"blend must be in (0, 100], got {blend}")
        if features.shape[0] == 0:
            raise ValueError("cannot train on an empty database")
        self.features = np.asarray(features, dtype=float)
        self.labels = tuple(labels)
        self.blend = blend
        self.classes: List[str] = sorted(set(self.labels))
        codes = {c: i for i, c in enumerate(self.classes)}
        self.label_codes = np.array([codes[label] for label in self.labels], dtype=int)

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    def _target_neff(self) -> float:
        return 1.0 + (self.blend / 100.0) * (self.size - 1)

    def _log_scales(self, dist: np.ndarray) -> np.ndarray:
        """
        Per (query, attribute) log x0 via bisection

        dist has shape (Q, A, N). Returns log x0 with shape (Q, A).
        """
        target = self._target_neff()
        positive = np.where(dist > 0, dist, np.inf).min(axis=-1)
        largest = dist.max(axis=-1)
        # Attributes with all-zero distances are indifferent to the scale
        flat = ~np.isfinite(positive)
        positive = np.where(flat, 1.0, positive)
        largest = np.where(largest > 0, largest, 1.0)

        lo = np.log(positive) - np.log(1e3)
        hi = np.log(largest) + np.log(1e3)

        result = np.where(flat, 0.0, 0.5 * (lo + hi))
        done = flat.copy()
        for _ in range(MAX_BISECTIONS):
            if done.all():
                break
            mid = 0.5 * (lo + hi)
            n_mid = _effective_count(-dist / np.exp(mid)[..., None])
            # unreachable targets (ties at the nearest distance) end when the bracket collapses
            hit = ~done & ((np.abs(n_mid - target) <= NEFF_TOLERANCE) | (hi - lo < 1e-9))
            result = np.where(hit, mid, result)
            done |= hit
            too_small = n_mid < target
            lo = np.where(too_small, mid, lo)
            hi = np.where(too_small, hi, mid)
        # iteration cap: midpoint scale
        return np.where(done, result, 0.5 * (lo + hi))

    def predict_proba(self, queries: np.ndarray) -> np.ndarray:
        """Class probabilities, shape (Q, len(classes)), columns in self.classes order"""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.width:
            raise ValueError(f"feature width {queries.shape[1]} does not match model width {self.width}")

        out = np.empty((queries.shape[0], len(self.classes)))
        train_t = self.features.T[None, :, :]  # (1, A, N)
        for start in range(0, queries.shape[0], _QUERY_CHUNK):
            chunk = queries[start:start + _QUERY_CHUNK]
            dist = np.abs(chunk[:, :, None] - train_t)  # (Q, A, N)
            log_x0 = self._log_scales(dist)
            log_sim = -(dist / np.exp(log_x0)[..., None]).sum(axis=1)  # (Q, N)
            scores = np.stack(
                [logsumexp(log_sim[:, self.label_codes == c], axis=1) for c in range(len(self.classes))],
                axis=1,
            )
            out[start:start + chunk.shape[0]] = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
        return out

    def predict(self, features: np.ndarray) -> RoomPosterior:
        return _posterior(self.classes, self.predict_proba(features)[0])


class KnnModel:
    """Majority-frequency KNN room classifier"""

    def __init__(self, features: np.ndarray, labels: Sequence[str], k: int):
        if features.shape[0] == 0:
            raise ValueError("cannot train on an empty database")
        if not 1 <= k <= features.shape[0]:
            raise ValueError(f"k must be in [1, {features.shape[0]}], got {k}")
        self.features = np.asarray(features, dtype=float)
        self.labels = tuple(labels)
        self.k = k
        self.classes: List[str] = sorted(set(self.labels))
        codes = {c: i for i, c in enumerate(self.classes)}
        self.label_codes = np.array([codes[label] for label in self.labels], dtype=int)
        self.index = NeighborIndex(self.features)

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    def predict_proba(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.width:
            raise ValueError(f"feature width {queries.shape[1]} does not match model width {self.width}")
        out = np.zeros((queries.shape[0], len(self.classes)))
        for start in range(0, queries.shape[0], _QUERY_CHUNK):
            idx = self.index.query(queries[start:start + _QUERY_CHUNK], self.k)
            for q, row in enumerate(idx, start):
                out[q] = np.bincount(self.label_codes[row], minlength=len(self.classes)) / self.k
        return out

    def predict(self, features: np.ndarray) -> RoomPosterior:
        return _posterior(self.classes, self.predict_proba(features)[0])


Classifier = Union[KStarModel, KnnModel]


def _posterior(classes: Sequence[str], row: np.ndarray) -> RoomPosterior:
    row = row / row.sum()
    return RoomPosterior(probabilities={c: float(p) for c, p in zip(classes, row)})


def kstar_train(db: FingerprintDatabase, blend: Optional[float] = None) -> KStarModel:
    blend = settings.KSTAR_BLEND if blend is None else blend
    if len(db) == 0:
        raise ValueError("cannot train on an empty database")
    model = KStarModel(db.features, db.labels, blend)
    logger.debug("kstar_trained", instances=model.size, classes=len(model.classes), blend=blend)
    return model


def kstar_predict(model: KStarModel, features: np.ndarray) -> RoomPosterior:
    return model.predict(features)


def knn_predict(db: FingerprintDatabase, features: np.ndarray, k: Optional[int] = None) -> RoomPosterior:
    k = settings.KNN_K if k is None else k
    return KnnModel(db.features, db.labels, k).predict(features)


def train_classifier(db: FingerprintDatabase, spec: ClassifierSpec) -> Classifier:
    if isinstance(spec, KStarSpec):
        return kstar_train(db, spec.blend)
    if isinstance(spec, KnnSpec):
        return KnnModel(db.features, db.labels, spec.k)
    raise ValueError(f"unsupported classifier spec: {spec}")


def spec_label(spec: ClassifierSpec) -> str:
    if isinstance(spec, KStarSpec):
        return f"kstar(blend={spec.blend:g})"
    return f"knn(k={spec.k})"


def cross_validate(
    db: FingerprintDatabase,
    spec: ClassifierSpec,
    folds: Optional[int] = None,
    seed: Optional[int] = None,
) -> CrossValidationResult:
    """
    Stratified k-fold accuracy (percent) of argmax-posterior predictions

    Falls back to plain shuffled k-fold when some class has fewer instances
    than folds, and says so in the result.
    """
    folds = settings.CV_FOLDS if folds is None else folds
    seed = settings.DEFAULT_SEED if seed is None else seed
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if len(db) < folds:
        raise ValueError(f"need at least {folds} instances, got {len(db)}")

    labels = np.asarray(db.labels)
    stratified = min(db.class_counts().values()) >= folds
    warning = None
    if stratified:
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        splits = splitter.split(db.features, labels)
    else:
        warning = "class with fewer instances than folds; using non-stratified k-fold"
        logger.warning("cv_stratification_downgraded", folds=folds, counts=db.class_counts())
        splits = KFold(n_splits=folds, shuffle=True, random_state=seed).split(db.features)

    correct = 0
    fold_accuracies = []
    build_ms = 0.0
    for train_idx, test_idx in splits:
        started = time.perf_counter()
        model = train_classifier(db.subset(train_idx), spec)
        build_ms += (time.perf_counter() - started) * 1000.0

        proba = model.predict_proba(db.features[test_idx])
        # classes are sorted, so argmax's first-max rule picks the smallest id on ties
        predicted = np.asarray(model.classes)[np.argmax(proba, axis=1)]
        hits = int((predicted == labels[test_idx]).sum())
        correct += hits
        fold_accuracies.append(100.0 * hits / len(test_idx))

    result = CrossValidationResult(
        classifier=spec_label(spec),
        accuracy=100.0 * correct / len(db),
        folds=folds,
        fold_accuracies=fold_accuracies,
        stratified=stratified,
        warning=warning,
        build_time_ms=build_ms / folds,
        instances=len(db),
    )
    logger.info("cross_validation_done", classifier=result.classifier, accuracy=round(result.accuracy, 3))
    return result
