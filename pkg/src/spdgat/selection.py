"""Stratified learning-based training-sample selection and class balancing.

Pairwise differences between connectomes are encoded as tangent-space
difference vectors (with their log-Euclidean dissimilarity) plus node
centrality changes; a ridge regression maps those features to the absolute
class-score difference of the pair.  Each candidate training sample is then
scored by its mean predicted difference against the holdout group, and the k
lowest-scoring samples per class are kept: a low expected difference marks a
sample as centrally representative of its class.  Holdout labels never enter
the computation, only holdout features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd
from .errors import SingularSystem, SpdgatError
from .graphs import DEFAULT_SPARSIFY_QUANTILE, Connectome, centrality_profile

CENTRALITY_MODES = ("all", "dc", "cc", "ec")


@dataclass(frozen=True)
class SelectionConfig:
    k_per_class: int = 4
    ridge_lambda: float = 1e-3
    oversample_seed: int = 0
    folds: int = 4
    sparsify_quantile: float = DEFAULT_SPARSIFY_QUANTILE
    centrality: str = "all"
    spd_floor: float = spd.DEFAULT_NEAREST_FLOOR

    def __post_init__(self):
        if self.k_per_class < 1:
            raise ValueError("k_per_class must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        if self.centrality not in CENTRALITY_MODES:
            raise ValueError(f"centrality must be one of {CENTRALITY_MODES}")


@dataclass(frozen=True)
class PairFeature:
    """Difference features of one unordered subject pair (oriented first minus second)."""

    subject_i: str
    subject_j: str
    tangent_diff_vec: np.ndarray
    centrality_diff: np.ndarray
    lerm_distance: float
    target: float

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.tangent_diff_vec, self.centrality_diff, [self.lerm_distance]]
        )


@dataclass(frozen=True)
class SelectionRow:
    subject_id: str
    label: int
    score: float
    selected: bool


@dataclass(frozen=True)
class Regressor:
    coef: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.coef + self.intercept


def manifold_point(conn: Connectome, floor: float = spd.DEFAULT_NEAREST_FLOOR) -> spd.SpdMatrix:
    """Map a connectome back to the SPD manifold.

    Connectome construction removes the unit diagonal of the underlying
    connectivity matrix, so it is restored here before the SPD repair.
    """
    candidate = conn.weights + np.eye(conn.dim)
    try:
        return spd.nearest_spd(candidate, floor)
    except SpdgatError as exc:
        raise type(exc)(f"subject {conn.subject_id!r}: {exc}") from exc


@dataclass(frozen=True)
class _Embedded:
    subject_id: str
    label: int
    tangent: np.ndarray  # sqrt2-scaled vectorization of the log-matrix
    centrality: np.ndarray


def _embed(conns, config: SelectionConfig) -> list:
    out = []
    for conn in conns:
        tangent = spd.log_map(manifold_point(conn, config.spd_floor))
        profile = centrality_profile(conn, config.sparsify_quantile)
        if config.centrality == "all":
            cent = profile.concatenated()
        elif config.centrality == "dc":
            cent = profile.degree
        elif config.centrality == "cc":
            cent = profile.closeness
        else:
            cent = profile.eigenvector
        out.append(
            _Embedded(
                subject_id=conn.subject_id,
                label=conn.label,
                tangent=tangent.vectorized,
                centrality=cent,
            )
        )
    return out


def _pair(a: _Embedded, b: _Embedded) -> PairFeature:
    # canonical orientation by subject id: the signed difference features of a
    # pair must not depend on which group the call site lists first
    if a.subject_id > b.subject_id:
        a, b = b, a
    diff = a.tangent - b.tangent
    return PairFeature(
        subject_i=a.subject_id,
        subject_j=b.subject_id,
        tangent_diff_vec=diff,
        centrality_diff=a.centrality - b.centrality,
        # the sqrt2 scaling makes the squared vector norm equal the squared
        # Frobenius norm of the log-matrix difference
        lerm_distance=float(diff @ diff),
        target=float(abs(a.label - b.label)),
    )


def build_pair_features(train_in, config: SelectionConfig = SelectionConfig()) -> list:
    """All n(n-1)/2 unordered-pair difference features over the train-in group."""
    if len(train_in) < 2:
        raise ValueError("need at least two samples to build pairs")
    dims = {c.dim for c in train_in}
    if len(dims) != 1:
        raise ValueError(f"mixed connectome dimensions {sorted(dims)}")
    embedded = _embed(train_in, config)
    pairs = []
    for i in range(len(embedded)):
        for j in range(i + 1, len(embedded)):
            pairs.append(_pair(embedded[i], embedded[j]))
    return pairs


def fit_difference_regressor(pairs, ridge_lambda: float) -> Regressor:
    """Ridge least squares of pair targets on the pair feature vectors.

    Features are standardized internally (tangent entries, centrality
    changes, and the distance live on very different scales, and the penalty
    should treat them comparably); the returned coefficients are
    back-transformed to raw units.  The intercept is unpenalized.  With
    ridge_lambda = 0 a rank-deficient design raises SingularSystem;
    otherwise the primal or dual normal equations are used depending on
    whether features or samples are the smaller side.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    x = np.stack([p.vector() for p in pairs])
    y = np.array([p.target for p in pairs])
    x_mean = x.mean(axis=0)
    x_scale = x.std(axis=0)
    x_scale[x_scale == 0] = 1.0  # constant columns carry nothing; avoid 0/0
    y_mean = y.mean()
    xs = (x - x_mean) / x_scale
    yc = y - y_mean
    n, p = xs.shape
    if ridge_lambda == 0:
        if np.linalg.matrix_rank(xs) < p:
            raise SingularSystem(
                f"rank-deficient design ({n} pairs, {p} features) with ridge_lambda=0"
            )
        scaled, *_ = np.linalg.lstsq(xs, yc, rcond=None)
    elif p <= n:
        scaled = np.linalg.solve(xs.T @ xs + ridge_lambda * np.eye(p), xs.T @ yc)
    else:
        dual = np.linalg.solve(xs @ xs.T + ridge_lambda * np.eye(n), yc)
        scaled = xs.T @ dual
    coef = scaled / x_scale
    return Regressor(coef=coef, intercept=float(y_mean - x_mean @ coef))


def score_samples(
    regressor: Regressor,
    train_in,
    holdout,
    config: SelectionConfig = SelectionConfig(),
) -> dict:
    """Mean predicted score difference of each train-in sample against the holdout group.

    Lower is better: a sample predicted to differ little from held-out
    subjects has high expected predictive power.  Only holdout features are
    touched; holdout labels play no role.
    """
    if not holdout:
        raise ValueError("holdout group is empty")
    emb_train = _embed(train_in, config)
    emb_hold = _embed(holdout, config)
    scores = {}
    for tr in emb_train:
        preds = [regressor.predict(_pair(tr, ho).vector()) for ho in emb_hold]
        scores[tr.subject_id] = float(np.mean(preds))
    return scores


def select_top_k_stratified(scores: dict, labels: dict, k_per_class: int) -> list:
    """Per class, the k lowest-scoring subject ids (ties favor the smaller id).

    Classes with fewer than k members contribute all of them.  The result is
    ordered by class, then rank.
    """
    by_class: dict = {}
    for sid, score in scores.items():
        by_class.setdefault(labels[sid], []).append((score, sid))
    chosen = []
    for cls in sorted(by_class):
        ranked = sorted(by_class[cls])
        chosen.extend(sid for _, sid in ranked[:k_per_class])
    return chosen


def random_oversample(selected, seed: int) -> list:
    """Duplicate minority-class samples (with replacement, seeded) up to the majority count.

    The originals are always retained, in their input order; duplicates are
    appended grouped by ascending class label.
    """
    if not selected:
        raise ValueError("nothing to oversample")
    by_class: dict = {}
    for sample in selected:
        by_class.setdefault(sample.label, []).append(sample)
    target = max(len(group) for group in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(selected)
    for cls in sorted(by_class):
        group = by_class[cls]
        deficit = target - len(group)
        if deficit > 0:
            picks = rng.integers(0, len(group), size=deficit)
            out.extend(group[i] for i in picks)
    return out
