"""Multiclass logistic regression with a pinned reference class.

The model keeps weights only for the first c-1 classes; the last class
has an implicit zero logit.  Probabilities therefore are not shift
invariant: adding a constant to every free logit changes them, unlike a
full softmax parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ClassProbTable",
    "FitResult",
    "ModelWeights",
    "class_probs",
    "entropy_scores",
    "fit",
    "predict",
    "predict_accuracy",
    "prob_table",
]


@dataclass
class ModelWeights:
    """Weights theta of shape (d, c-1); column k scores class k."""

    theta: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ValueError("theta must be a d x (c-1) matrix")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.theta.shape[1] != self.num_classes - 1:
            raise ValueError(
                f"theta has {self.theta.shape[1]} columns, expected {self.num_classes - 1}"
            )

    @property
    def dim(self):
        return self.theta.shape[0]

    @property
    def num_free(self):
        return self.num_classes - 1


@dataclass
class ClassProbTable:
    """Cached per-point probabilities of the c-1 free classes, shape (n, c-1).

    The reference-class probability of row i is 1 - probs[i].sum().
    """

    probs: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[1] != self.num_classes - 1:
            raise ValueError("probs must have shape (n, c-1)")

    def full(self):
        """All c class probabilities, reference class last, shape (n, c)."""
        rest = np.clip(1.0 - self.probs.sum(axis=1, keepdims=True), 0.0, 1.0)
        return np.hstack([self.probs, rest])


def _softmax_with_reference(logits):
    """Stable softmax over [logits, 0]; returns the full (n, c) table."""
    aug = np.hstack([logits, np.zeros((logits.shape[0], 1))])
    aug -= aug.max(axis=1, keepdims=True)
    e = np.exp(aug)
    return e / e.sum(axis=1, keepdims=True)


def class_probs(weights: ModelWeights, x):
    """Probabilities (h, p_last) for one point.

    h[k] = exp(theta_k'x) / (1 + sum_l exp(theta_l'x)) and p_last is the
    pinned reference class.  Always evaluated via max-logit subtraction,
    so large logits do not overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (weights.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({weights.dim},)")
    p = _softmax_with_reference((x @ weights.theta)[None, :])[0]
    return p[:-1], float(p[-1])


def prob_table(weights: ModelWeights, features):
    """Probability table for every row of ``features`` (cached per round)."""
    features = np.asarray(features, dtype=np.float64)
    p = _softmax_with_reference(features @ weights.theta)
    return ClassProbTable(p[:, :-1], weights.num_classes)


@dataclass
class FitResult:
    weights: ModelWeights
    losses: list = field(default_factory=list)
    converged: bool = False
    degenerate: bool = False
    absent_classes: list = field(default_factory=list)
    n_iter: int = 0


def _loss_grad(theta, features, labels, l2, free_mask):
    n, _ = features.shape
    k = theta.shape[1]
    p = _softmax_with_reference(features @ theta)
    picked = p[np.arange(n), labels]
    loss = -float(np.sum(np.log(np.maximum(picked, 1e-300))))
    loss += 0.5 * l2 * float(np.sum(theta**2))
    onehot = np.zeros((n, k))
    free = labels < k
    onehot[np.flatnonzero(free), labels[free]] = 1.0
    grad = features.T @ (p[:, :k] - onehot) + l2 * theta
    grad *= free_mask  # absent classes stay pinned at zero
    return loss, grad


def fit(features, labels, num_classes, l2=1.0, max_iter=500):
    """Minimize the L2-regularized negative log-likelihood.

    Full-batch gradient descent with Armijo backtracking; stops when the
    gradient norm falls at or below 1e-6 * n.  Classes that never occur in
    ``labels`` keep zero weights.  When fewer than two classes are present
    the fit is skipped entirely and the result carries ``degenerate=True``.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels disagree on the number of points")
    if features.shape[0] < 1:
        raise ValueError("need at least one training point")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels must lie in [0, num_classes)")

    n, d = features.shape
    k = num_classes - 1
    present = np.unique(labels)
    absent = sorted(set(range(num_classes)) - set(present.tolist()))
    theta = np.zeros((d, k))
    if present.size < 2:
        return FitResult(
            ModelWeights(theta, num_classes),
            degenerate=True,
            absent_classes=absent,
        )

    free_mask = np.ones((1, k))
    for c in absent:
        if c < k:
            free_mask[0, c] = 0.0

    tol = 1e-6 * n
    step = 1.0
    loss, grad = _loss_grad(theta, features, labels, l2, free_mask)
    losses = [loss]
    converged = False
    iters_done = 0
    while iters_done < max_iter:
        gnorm2 = float(np.sum(grad**2))
        if np.sqrt(gnorm2) <= tol:
            converged = True
            break
        step = min(step * 2.0, 1e4)
        while step >= 1e-16:
            cand = theta - step * grad
            cand_loss, cand_grad = _loss_grad(cand, features, labels, l2, free_mask)
            if cand_loss <= loss - 1e-4 * step * gnorm2:
                break
            step *= 0.5
        if step < 1e-16:
            break  # flat to machine precision; no descent step exists
        theta, loss, grad = cand, cand_loss, cand_grad
        losses.append(loss)
        iters_done += 1
    if not converged:
        converged = float(np.linalg.norm(grad)) <= tol

    return FitResult(
        ModelWeights(theta, num_classes),
        losses=losses,
        converged=converged,
        absent_classes=absent,
        n_iter=iters_done,
    )


def predict(weights: ModelWeights, features):
    """Argmax-probability labels; ties go to the lowest class index."""
    features = np.asarray(features, dtype=np.float64)
    p = _softmax_with_reference(features @ weights.theta)
    return np.argmax(p, axis=1)


def predict_accuracy(weights: ModelWeights, features, labels):
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(predict(weights, features) == labels))


def entropy_scores(table: ClassProbTable):
    """Per-point sum of p log p over all classes (reference included).

    More negative means more uncertain; the entropy baseline labels the
    points with the smallest scores.
    """
    p = table.full()
    return np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0).sum(axis=1)
