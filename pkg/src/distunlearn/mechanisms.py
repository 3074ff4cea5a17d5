"""Deletion mechanisms and scoring rules.

Two plan builders implement the core mechanisms: uniform random removal and
selective removal of the samples farthest from the preserve-side empirical
mean.  For feature-vector datasets a library of scoring rules ranks rows of
the forget partition for deletion; higher score means higher deletion
priority (most divergent from the preserve distribution goes first).

Rules
-----
- ``norm``       : l2 length of the row (aliases: ``tfidf-norm``, ``l2-norm``)
- ``cos-mu2``    : cosine distance to the preserve-side mean
- ``lr-cos``     : cosine distance to the preserve mean minus cosine distance
                   to the forget mean (likelihood-ratio flavored)
- ``maha-mu2``   : Mahalanobis distance to the preserve mean under the
                   ridge-regularized preserve covariance
- ``lr-maha``    : Mahalanobis analogue of ``lr-cos`` (both distances under
                   the preserve covariance)
- ``knn-ratio``  : local kernel density ratio using k-th nearest neighbor
                   distances, exp((d2^2 - d1^2) / sigma^2)
- ``random``     : seeded uniform scores (baseline)

Ties between equal scores always break toward the lower row index, so plans
are reproducible and top-f selections are nested in f.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import rng as rnglib
from .data_io import LabeledDataset

__all__ = [
    "RemovalPlan",
    "ScoredSample",
    "ScoringParams",
    "FEATURE_RULES",
    "random_removal",
    "selective_removal_gaussian",
    "score_features",
    "plan_from_scores",
    "apply_plan",
]

FEATURE_RULES = ("norm", "cos-mu2", "lr-cos", "knn-ratio", "maha-mu2", "lr-maha", "random")
_RULE_ALIASES = {"tfidf-norm": "norm", "l2-norm": "norm"}


@dataclass(frozen=True)
class RemovalPlan:
    """An ordered set of forget-partition row indices to delete."""

    rule: str
    budget_f: int
    removed_indices: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if self.budget_f < 0:
            raise ValueError("budget_f must be >= 0")
        if len(self.removed_indices) != self.budget_f:
            raise ValueError(
                f"plan has {len(self.removed_indices)} indices but budget_f={self.budget_f}"
            )
        if len(set(self.removed_indices)) != len(self.removed_indices):
            raise ValueError("removed_indices must be distinct")
        if any(i < 0 for i in self.removed_indices):
            raise ValueError("removed_indices must be non-negative")


@dataclass(frozen=True)
class ScoredSample:
    index: int
    score: float
    flag: str | None = None


@dataclass(frozen=True)
class ScoringParams:
    """Knobs for the feature scoring rules.

    ``sigma`` is the kernel bandwidth for ``knn-ratio``; when None it
    defaults to the median pairwise distance within the pooled rows
    (subsampled by a deterministic stride above ``bandwidth_cap`` rows).
    ``ridge_scale`` multiplies trace(Sigma)/d for the Mahalanobis ridge.
    ``seed`` feeds the ``random`` rule only.
    """

    k: int = 10
    sigma: float | None = None
    ridge_scale: float = 1e-6
    seed: int = 0
    bandwidth_cap: int = 2048


def random_removal(n1: int, f: int, seed: int) -> RemovalPlan:
    """Delete f of n1 forget-side rows uniformly without replacement."""
    n1 = int(n1)
    f = int(f)
    if n1 < 0:
        raise ValueError("n1 must be >= 0")
    if not 0 <= f <= n1:
        raise ValueError(f"budget f={f} must satisfy 0 <= f <= n1={n1}")
    gen = rnglib.generator(seed, "random-removal")
    picked = np.sort(gen.permutation(n1)[:f])
    return RemovalPlan(rule="random", budget_f=f,
                       removed_indices=tuple(int(i) for i in picked), seed=int(seed))


def selective_removal_gaussian(samples_p1, samples_p2, f: int) -> RemovalPlan:
    """Delete the f forget-side samples farthest from the preserve mean.

    Scores are |x_i - mean(samples_p2)|; ties break toward the lower index.
    """
    x1 = np.asarray(samples_p1, dtype=float).ravel()
    x2 = np.asarray(samples_p2, dtype=float).ravel()
    f = int(f)
    if x2.size == 0:
        raise ValueError("samples_p2 is empty: preserve-side mean is undefined")
    if not 0 <= f <= x1.size:
        raise ValueError(f"budget f={f} must satisfy 0 <= f <= {x1.size}")
    scores = np.abs(x1 - x2.mean())
    order = _priority_order(scores)
    return RemovalPlan(rule="selective-gaussian", budget_f=f,
                       removed_indices=tuple(int(i) for i in order[:f]), seed=0)


def _priority_order(scores: np.ndarray) -> np.ndarray:
    """Row indices sorted by (score descending, index ascending)."""
    idx = np.arange(scores.size)
    return np.lexsort((idx, -scores))


def plan_from_scores(scored: list[ScoredSample], rule: str, f: int, seed: int = 0) -> RemovalPlan:
    """Top-f plan from a scored sample sequence (score desc, index asc)."""
    if not 0 <= f <= len(scored):
        raise ValueError(f"budget f={f} must satisfy 0 <= f <= {len(scored)}")
    scores = np.array([s.score for s in scored], dtype=float)
    indices = np.array([s.index for s in scored], dtype=int)
    order = np.lexsort((indices, -scores))
    removed = tuple(int(indices[i]) for i in order[:f])
    return RemovalPlan(rule=rule, budget_f=f, removed_indices=removed, seed=seed)


# ---------------------------------------------------------------------------
# feature scoring
# ---------------------------------------------------------------------------


def _row_matrix(features):
    if sp.issparse(features):
        return sp.csr_matrix(features, dtype=float)
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    return arr


def _row_norms(x) -> np.ndarray:
    if sp.issparse(x):
        return np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    return np.linalg.norm(x, axis=1)


def _mean_vector(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.mean(axis=0)).ravel()
    return x.mean(axis=0)


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)


def _cosine_distance_to(x, direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1 - cos(row, direction) per row; zero-norm rows get distance 0 + flag."""
    norms = _row_norms(x)
    dir_norm = float(np.linalg.norm(direction))
    dots = np.asarray(x @ direction).ravel()
    zero = norms == 0.0
    if dir_norm == 0.0:
        # Degenerate reference direction: all distances are undefined; treat
        # every row like a zero-norm row rather than failing the sweep.
        return np.zeros(norms.size), np.ones(norms.size, dtype=bool)
    safe = np.where(zero, 1.0, norms)
    dist = 1.0 - dots / (safe * dir_norm)
    dist[zero] = 0.0
    return dist, zero


def _squared_distances(a, b) -> np.ndarray:
    """Dense (n_a, n_b) matrix of squared euclidean distances."""
    a_sq = _row_norms(a) ** 2
    b_sq = _row_norms(b) ** 2
    cross = (a @ b.T).toarray() if sp.issparse(a) else a @ _dense(b).T
    d2 = a_sq[:, None] + b_sq[None, :] - 2.0 * np.asarray(cross)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kth_smallest(values: np.ndarray, k: int) -> np.ndarray:
    """k-th smallest entry per row (1-based k)."""
    return np.partition(values, k - 1, axis=1)[:, k - 1]


def _median_pairwise_distance(pooled, cap: int) -> float:
    n = pooled.shape[0]
    if n > cap:
        # Deterministic stride subsample keeps the estimate reproducible
        # without dragging an RNG into a seedless scoring call.
        positions = np.linspace(0, n - 1, cap).round().astype(int)
        positions = np.unique(positions)
        pooled = pooled[positions]
        n = pooled.shape[0]
    d2 = _squared_distances(pooled, pooled)
    iu = np.triu_indices(n, k=1)
    if iu[0].size == 0:
        return 1.0
    return float(np.median(np.sqrt(d2[iu])))


def _mahalanobis_solver(features_p2, ridge_scale: float):
    x2 = _dense(features_p2)
    if x2.shape[0] < 2:
        raise ValueError("Mahalanobis rules need at least 2 preserve-side rows")
    cov = np.cov(x2, rowvar=False)
    cov = np.atleast_2d(cov)
    d = cov.shape[0]
    ridge = ridge_scale * np.trace(cov) / d
    cov_r = cov + ridge * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov_r)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular covariance beyond ridge repair") from exc

    def dist(x, mu):
        diff = _dense(x) - mu
        y = np.linalg.solve(chol, diff.T)
        return np.sqrt(np.sum(y * y, axis=0))

    return dist


def score_features(features_p1, features_p2, rule: str,
                   params: ScoringParams | None = None) -> list[ScoredSample]:
    """Score every forget-partition row for deletion priority.

    Returns one ``ScoredSample`` per row of ``features_p1``; higher score
    means delete earlier.  The preserve-side statistics (mean, covariance,
    neighbor pool) always come from the full ``features_p2`` given here --
    downsampling for classifier training happens after scoring.
    """
    params = params or ScoringParams()
    rule = _RULE_ALIASES.get(rule, rule)
    if rule not in FEATURE_RULES:
        raise ValueError(f"unknown scoring rule {rule!r}; known: {FEATURE_RULES}")
    x1 = _row_matrix(features_p1)
    n1 = x1.shape[0]
    if n1 == 0:
        raise ValueError("features_p1 has no rows")

    needs_p2 = rule in ("cos-mu2", "lr-cos", "knn-ratio", "maha-mu2", "lr-maha")
    x2 = None
    if needs_p2:
        x2 = _row_matrix(features_p2)
        if x2.shape[0] == 0:
            raise ValueError(f"rule {rule!r} needs a non-empty preserve partition")
        if x2.shape[1] != x1.shape[1]:
            raise ValueError("feature dimension mismatch between partitions")

    flags: np.ndarray | None = None
    if rule == "norm":
        scores = _row_norms(x1)
    elif rule == "random":
        gen = rnglib.generator(params.seed, "random-scores")
        scores = gen.random(n1)
    elif rule == "cos-mu2":
        scores, zero = _cosine_distance_to(x1, _mean_vector(x2))
        flags = zero
    elif rule == "lr-cos":
        d2, zero2 = _cosine_distance_to(x1, _mean_vector(x2))
        d1, zero1 = _cosine_distance_to(x1, _mean_vector(x1))
        scores = d2 - d1
        flags = zero1 | zero2
        scores[flags] = 0.0
    elif rule == "maha-mu2":
        dist = _mahalanobis_solver(x2, params.ridge_scale)
        scores = dist(x1, _mean_vector(x2))
    elif rule == "lr-maha":
        dist = _mahalanobis_solver(x2, params.ridge_scale)
        scores = dist(x1, _mean_vector(x2)) - dist(x1, _mean_vector(x1))
    elif rule == "knn-ratio":
        k = int(params.k)
        if not 1 <= k <= min(n1 - 1, x2.shape[0]):
            raise ValueError(
                f"k={k} out of range: need 1 <= k <= min(|p1|-1, |p2|) = "
                f"{min(n1 - 1, x2.shape[0])} (self-matches are excluded)"
            )
        if params.sigma is not None:
            sigma = float(params.sigma)
            if sigma <= 0:
                raise ValueError("sigma must be positive")
        else:
            pooled = sp.vstack([x1, x2]) if sp.issparse(x1) else np.vstack([_dense(x1), _dense(x2)])
            sigma = _median_pairwise_distance(pooled, params.bandwidth_cap)
            if sigma == 0.0:
                raise ValueError("degenerate pooled dataset: median pairwise distance is 0")
        d2_own = _squared_distances(x1, x1)
        np.fill_diagonal(d2_own, np.inf)
        d1k = _kth_smallest(d2_own, k)
        d2k = _kth_smallest(_squared_distances(x1, x2), k)
        scores = np.exp((d2k - d1k) / sigma**2)
    else:  # pragma: no cover
        raise AssertionError(rule)

    if not np.all(np.isfinite(scores)):
        raise ValueError(f"rule {rule!r} produced non-finite scores")
    if flags is not None and flags.any():
        warnings.warn(
            f"{int(flags.sum())} zero-norm row(s) under cosine rule {rule!r} scored 0",
            stacklevel=2,
        )
    out = []
    for i in range(n1):
        flag = "zero_norm" if flags is not None and flags[i] else None
        out.append(ScoredSample(index=i, score=float(scores[i]), flag=flag))
    return out


def apply_plan(dataset: LabeledDataset, plan: RemovalPlan) -> LabeledDataset:
    """Remove the planned forget-partition rows from a dataset.

    Plan indices address rows WITHIN the forget (P1) partition; preserve-side
    rows, labels, and provenance are untouched and survivor order is kept.
    """
    p1_pos = dataset.p1_positions()
    removed = np.asarray(plan.removed_indices, dtype=int)
    if removed.size and (removed.min() < 0 or removed.max() >= p1_pos.size):
        raise ValueError(
            f"plan index out of range for a forget partition of {p1_pos.size} rows"
        )
    drop = set(p1_pos[removed].tolist())
    keep = np.array([i for i in range(dataset.n) if i not in drop], dtype=int)
    return dataset.subset(keep)
