"""Downstream predictive impact: exact log-loss decompositions on finite
joints, a deterministic l2-regularized logistic classifier, and the
evaluation metrics used by the dataset sweeps.

On finite discrete joints every quantity in the log-loss story is exactly
computable, which turns the excess-risk decomposition

    L(h; q) - L(h_q*; q) = KL(q || p) - KL(q^X || p^X)

(h the Bayes predictor of p) into a machine-checkable identity; that is what
``logloss_decomposition`` and ``check_prop2`` do.

The classifier is full-batch gradient descent with a constant, data-derived
step size (1 over a safe Lipschitz bound), zero initialization, sigmoid loss
for two classes and multinomial softmax otherwise.  No stochasticity enters
anywhere, so retraining is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit, log_softmax, softmax

from .data_io import LabeledDataset

__all__ = [
    "FiniteJoint",
    "DecompositionResult",
    "Prop2Report",
    "ClassifierModel",
    "TrainingMeta",
    "Metrics",
    "logloss_decomposition",
    "check_prop2",
    "train_logistic",
    "predict_proba",
    "predict",
    "evaluate",
]


@dataclass(frozen=True)
class FiniteJoint:
    """A joint distribution over a finite X x Y grid."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 2:
            raise ValueError("probs must be |X| x |Y| with |X| >= 1, |Y| >= 2")
        if probs.min() < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"total mass {probs.sum()} differs from 1 by more than 1e-12")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_x(self) -> int:
        return self.probs.shape[0]

    @property
    def n_y(self) -> int:
        return self.probs.shape[1]

    def marginal_x(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @staticmethod
    def random(n_x: int, n_y: int, gen: np.random.Generator) -> "FiniteJoint":
        raw = gen.random((n_x, n_y)) + 1e-3
        return FiniteJoint(raw / raw.sum())


def _kl_discrete(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) for flat non-negative arrays; +inf on support violation."""
    q = q.ravel()
    p = p.ravel()
    mask = q > 0
    if np.any(p[mask] == 0):
        return math.inf
    return float(np.sum(q[mask] * (np.log(q[mask]) - np.log(p[mask]))))


def _bayes_logloss(q: FiniteJoint, p: FiniteJoint) -> float:
    """Expected log-loss under q of the Bayes predictor of p."""
    qx = q.marginal_x()
    px = p.marginal_x()
    total = 0.0
    for x in range(q.n_x):
        if qx[x] == 0:
            continue
        if px[x] == 0:
            return math.inf
        cond_p = p.probs[x] / px[x]
        for y in range(q.n_y):
            if q.probs[x, y] == 0:
                continue
            if cond_p[y] == 0:
                return math.inf
            total -= q.probs[x, y] * math.log(cond_p[y])
    return total


def _entropy_conditional(q: FiniteJoint) -> float:
    """Bayes-optimal risk under q: expected conditional label entropy."""
    qx = q.marginal_x()
    total = 0.0
    for x in range(q.n_x):
        if qx[x] == 0:
            continue
        cond = q.probs[x] / qx[x]
        nz = cond > 0
        total -= qx[x] * float(np.sum(cond[nz] * np.log(cond[nz])))
    return total


@dataclass(frozen=True)
class DecompositionResult:
    excess_loss: float
    joint_kl: float
    marginal_kl: float
    finite: bool

    @property
    def identity_gap(self) -> float:
        if not self.finite:
            return math.nan
        return self.excess_loss - (self.joint_kl - self.marginal_kl)


def logloss_decomposition(q: FiniteJoint, p: FiniteJoint) -> DecompositionResult:
    """Excess log-loss of p's Bayes predictor under q, plus both KL terms.

    ``excess_loss`` is computed from the two expected losses directly;
    ``joint_kl - marginal_kl`` is the other side of the identity.  Support
    violations are reported through ``finite=False`` with infinite values.
    """
    if q.probs.shape != p.probs.shape:
        raise ValueError("joints must share the same support grid")
    joint_kl = _kl_discrete(q.probs, p.probs)
    marginal_kl = _kl_discrete(q.marginal_x(), p.marginal_x())
    loss = _bayes_logloss(q, p)
    if math.isinf(joint_kl) or math.isinf(loss):
        return DecompositionResult(math.inf, joint_kl, marginal_kl, finite=False)
    excess = loss - _entropy_conditional(q)
    return DecompositionResult(excess, joint_kl, marginal_kl, finite=True)


@dataclass(frozen=True)
class Prop2Report:
    """All six quantities of the downstream log-loss guarantee check."""

    alpha: float
    epsilon: float
    delta1: float
    delta2: float
    removal_excess: float
    preservation_excess: float
    finite: bool

    @property
    def removal_identity_gap(self) -> float:
        return self.removal_excess - (self.alpha - self.delta1)

    @property
    def preservation_identity_gap(self) -> float:
        return self.preservation_excess - (self.epsilon - self.delta2)


def check_prop2(p1: FiniteJoint, p2: FiniteJoint, p: FiniteJoint) -> Prop2Report:
    """Evaluate the removal/preservation excess-loss identities against p.

    alpha = KL(p1 || p), epsilon = KL(p2 || p); delta1, delta2 are the input
    marginal divergences.  The removal excess equals alpha - delta1 and the
    preservation excess equals epsilon - delta2 exactly (they are identities,
    not mere inequalities); callers assert the gaps are ~0.
    """
    d1 = logloss_decomposition(p1, p)
    d2 = logloss_decomposition(p2, p)
    finite = d1.finite and d2.finite
    return Prop2Report(
        alpha=d1.joint_kl, epsilon=d2.joint_kl,
        delta1=d1.marginal_kl, delta2=d2.marginal_kl,
        removal_excess=d1.excess_loss, preservation_excess=d2.excess_loss,
        finite=finite,
    )


# ---------------------------------------------------------------------------
# logistic classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingMeta:
    seed: int
    iterations: int
    final_objective: float
    converged: bool
    grad_norm: float
    objective_trace: tuple[float, ...]


@dataclass(frozen=True)
class ClassifierModel:
    """Linear classifier: weight matrix (classes x features) + bias.

    For two classes a single sigmoid row is stored and ``classes`` records
    the label values in order (negative, positive).
    """

    weights: np.ndarray
    bias: np.ndarray
    classes: np.ndarray
    l2_strength: float
    training_meta: TrainingMeta

    @property
    def binary(self) -> bool:
        return self.classes.size == 2 and self.weights.shape[0] == 1


def _matvec(x, w):
    out = x @ w
    return np.asarray(out).ravel() if sp.issparse(x) else out


def _mean_sq_row_norm(x) -> float:
    if sp.issparse(x):
        sq = np.asarray(x.multiply(x).sum(axis=1)).ravel()
    else:
        sq = np.sum(x * x, axis=1)
    return float(sq.mean())


def train_logistic(train: LabeledDataset, l2_strength: float = 1.0, seed: int = 0,
                   max_iter: int = 500, tol: float = 1e-6) -> ClassifierModel:
    """Fit the l2-regularized logistic model by full-batch gradient descent.

    Objective: mean log-loss + (l2_strength / 2) ||weights||^2 (bias
    unregularized).  The step size is 1 over a Lipschitz upper bound derived
    from the data, so the objective decreases monotonically; iteration stops
    when the gradient norm reaches ``tol`` or at ``max_iter`` (recorded as
    non-converged).  Weights start at zero: the objective is convex, so the
    optimum is unique and the seed only enters the metadata.
    """
    if l2_strength < 0:
        raise ValueError("l2_strength must be >= 0")
    x = train.features
    if sp.issparse(x):
        if not np.all(np.isfinite(x.data)):
            raise ValueError("features contain non-finite values")
    elif not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise ValueError(f"training set has a single class ({classes.tolist()}); need >= 2")
    n = train.n
    y_index = np.searchsorted(classes, train.labels)

    mean_sq = _mean_sq_row_norm(x) + 1.0  # +1 for the bias coordinate
    binary = classes.size == 2
    curvature = 0.25 if binary else 0.5
    step = 1.0 / (curvature * mean_sq + l2_strength) if (mean_sq or l2_strength) else 1.0

    trace = []
    if binary:
        y = y_index.astype(float)
        w = np.zeros(x.shape[1])
        b = 0.0
        for iteration in range(max_iter + 1):
            z = _matvec(x, w) + b
            objective = float(-np.mean(y * log_expit(z) + (1.0 - y) * log_expit(-z)))
            objective += 0.5 * l2_strength * float(w @ w)
            trace.append(objective)
            resid = expit(z) - y
            grad_w = np.asarray(x.T @ resid).ravel() / n + l2_strength * w
            grad_b = float(resid.mean())
            grad_norm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
            if grad_norm <= tol or iteration == max_iter:
                break
            w -= step * grad_w
            b -= step * grad_b
        weights = w[None, :]
        bias = np.array([b])
    else:
        c = classes.size
        weights = np.zeros((c, x.shape[1]))
        bias = np.zeros(c)
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y_index] = 1.0
        for iteration in range(max_iter + 1):
            logits = np.asarray(x @ weights.T) + bias
            logp = log_softmax(logits, axis=1)
            objective = float(-logp[np.arange(n), y_index].mean())
            objective += 0.5 * l2_strength * float(np.sum(weights * weights))
            trace.append(objective)
            resid = softmax(logits, axis=1) - onehot
            grad_w = np.asarray(resid.T @ x) / n + l2_strength * weights
            grad_b = resid.mean(axis=0)
            grad_norm = math.sqrt(float(np.sum(grad_w * grad_w)) + float(grad_b @ grad_b))
            if grad_norm <= tol or iteration == max_iter:
                break
            weights -= step * grad_w
            bias -= step * grad_b
    converged = grad_norm <= tol
    meta = TrainingMeta(
        seed=int(seed), iterations=iteration, final_objective=trace[-1],
        converged=converged, grad_norm=grad_norm, objective_trace=tuple(trace),
    )
    return ClassifierModel(weights=weights, bias=bias, classes=classes,
                           l2_strength=float(l2_strength), training_meta=meta)


def predict_proba(model: ClassifierModel, features) -> np.ndarray:
    """Class probabilities (n x n_classes) in ``model.classes`` order."""
    if model.binary:
        z = _matvec(features, model.weights[0]) + model.bias[0]
        pos = expit(z)
        return np.column_stack([1.0 - pos, pos])
    logits = np.asarray(features @ model.weights.T) + model.bias
    return softmax(logits, axis=1)


def predict(model: ClassifierModel, features) -> np.ndarray:
    """Predicted class labels (ties resolve to the lower class index)."""
    proba = predict_proba(model, features)
    return model.classes[np.argmax(proba, axis=1)]


@dataclass(frozen=True)
class Metrics:
    """Evaluation summary; slice-dependent metrics are None when undefined."""

    recall_p1: float | None
    macro_f1_p2: float | None
    accuracy_per_class: dict[int, float]
    logloss: float
    p1_predicted_positive_rate: float | None


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(model: ClassifierModel, test: LabeledDataset,
             positive_label: int = 1) -> Metrics:
    """Compute the sweep metrics on a tagged test set.

    ``recall_p1`` is the true-positive rate for ``positive_label`` within
    the forget-tagged slice; ``macro_f1_p2`` averages per-class F1 over the
    classes present in the preserve slice; per-class accuracy covers the
    whole test set; ``p1_predicted_positive_rate`` is the fraction of
    forget-slice rows predicted positive regardless of their true label
    (the group-tag variant of recall).
    """
    preds = predict(model, test.features)
    proba = predict_proba(model, test.features)

    p1_mask = test.group == "P1"
    p2_mask = test.group == "P2"

    recall_p1 = None
    pos_mask = p1_mask & (test.labels == positive_label)
    if pos_mask.any():
        recall_p1 = float(np.mean(preds[pos_mask] == positive_label))
    p1_predicted_positive = None
    if p1_mask.any():
        p1_predicted_positive = float(np.mean(preds[p1_mask] == positive_label))

    macro_f1 = None
    if p2_mask.any():
        true2 = test.labels[p2_mask]
        pred2 = preds[p2_mask]
        f1s = []
        for c in np.unique(true2):
            tp = int(np.sum((pred2 == c) & (true2 == c)))
            fp = int(np.sum((pred2 == c) & (true2 != c)))
            fn = int(np.sum((pred2 != c) & (true2 == c)))
            f1s.append(_f1(tp, fp, fn))
        macro_f1 = float(np.mean(f1s))

    per_class = {}
    for c in np.unique(test.labels):
        mask = test.labels == c
        per_class[int(c)] = float(np.mean(preds[mask] == c))

    class_of = {int(c): j for j, c in enumerate(model.classes)}
    losses = np.empty(test.n)
    for i, label in enumerate(test.labels):
        j = class_of.get(int(label))
        prob = proba[i, j] if j is not None else 0.0
        losses[i] = -math.log(prob) if prob > 0 else math.inf
    return Metrics(
        recall_p1=recall_p1,
        macro_f1_p2=macro_f1,
        accuracy_per_class=per_class,
        logloss=float(np.mean(losses)),
        p1_predicted_positive_rate=p1_predicted_positive,
    )
