"""One-vs-rest L2 logistic regression and the majority-class baseline.

Each class c gets a binary problem with targets y in {-1, +1}:

    minimize  0.5 * ||w||^2 + C * sum_i log(1 + exp(-y_i (w . x_i + b)))

The bias is not penalised. The solver is a damped Newton method (Armijo
backtracking from the origin), so the objective never increases between
iterations and the result depends only on the inputs.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from predaspect.errors import TrainingError


@dataclass(frozen=True)
class TrainConfig:
    c: float = 1.0
    tol: float = 1e-4
    max_iter: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise TrainingError(f"C must be positive, got {self.c}")
        if not self.tol > 0:
            raise TrainingError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise TrainingError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class BinaryFit:
    weights: np.ndarray
    bias: float
    n_iter: int
    converged: bool
    grad_norm: float
    objective_history: list = field(default_factory=list)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def sigmoid(z):
    """Numerically stable logistic function."""
    return _sigmoid(np.asarray(z, dtype=np.float64))


def objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, c: float) -> float:
    margins = y * (X @ w + b)
    return 0.5 * float(w @ w) + c * float(np.logaddexp(0.0, -margins).sum())


def objective_and_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, c: float):
    """Objective value and gradient wrt ``(w, b)``; ``y`` holds +-1 targets."""
    margins = y * (X @ w + b)
    value = 0.5 * float(w @ w) + c * float(np.logaddexp(0.0, -margins).sum())
    coef = -c * y * _sigmoid(-margins)
    grad_w = w + X.T @ coef
    grad_b = float(coef.sum())
    return value, grad_w, grad_b


def fit_binary(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()) -> BinaryFit:
    """Minimise the penalised logistic loss for one +-1 labelling.

    Stops once the gradient infinity-norm is <= ``config.tol``; running out of
    iterations is reported through ``converged=False``, not raised.
    """
    n, d = X.shape
    c = config.c
    Xa = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.ones(d + 1)
    reg[-1] = 0.0

    def evaluate(th):
        margins = y * (Xa @ th)
        value = 0.5 * float(th[:-1] @ th[:-1]) + c * float(np.logaddexp(0.0, -margins).sum())
        return value, margins

    value, margins = evaluate(theta)
    history = [value]
    grad = reg * theta + Xa.T @ (-c * y * _sigmoid(-margins))
    gnorm = float(np.abs(grad).max())
    n_iter = 0
    while gnorm > config.tol and n_iter < config.max_iter:
        p = _sigmoid(margins)
        curvature = c * p * (1.0 - p)
        hess = (Xa * curvature[:, None]).T @ Xa
        hess[np.diag_indices_from(hess)] += reg
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if not slope < 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        while True:
            cand = theta + t * step
            cand_value, cand_margins = evaluate(cand)
            if cand_value <= value + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                cand, cand_value, cand_margins = theta, value, margins
                break
        n_iter += 1
        stalled = cand is theta
        theta, value, margins = cand, cand_value, cand_margins
        history.append(value)
        grad = reg * theta + Xa.T @ (-c * y * _sigmoid(-margins))
        gnorm = float(np.abs(grad).max())
        if stalled:
            break
    return BinaryFit(theta[:-1].copy(), float(theta[-1]), n_iter, gnorm <= config.tol, gnorm, history)


@dataclass
class LinearModel:
    labels: tuple
    weights: np.ndarray
    biases: np.ndarray
    config: TrainConfig
    n_iter: tuple = ()
    converged: tuple = ()

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dimension:
            raise TrainingError(f"feature dimension {X.shape[-1]} does not match model dimension {self.dimension}")
        return X @ self.weights.T + self.biases

    def predict(self, X: np.ndarray) -> list:
        s = np.atleast_2d(self.scores(X))
        # np.argmax returns the first maximum, i.e. the earliest label in order
        return [self.labels[i] for i in s.argmax(axis=1)]

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "dimension": self.dimension,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "config": asdict(self.config),
            "n_iter": list(self.n_iter),
            "converged": list(self.converged),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "LinearModel":
        weights = np.asarray(data["weights"], dtype=np.float64)
        if weights.shape[1] != data["dimension"]:
            raise TrainingError("serialized weights do not match the declared dimension")
        return cls(
            labels=tuple(data["labels"]),
            weights=weights,
            biases=np.asarray(data["biases"], dtype=np.float64),
            config=TrainConfig(**data["config"]),
            n_iter=tuple(data.get("n_iter", ())),
            converged=tuple(data.get("converged", ())),
        )


@dataclass(frozen=True)
class PredictionScores:
    label: str
    scores: dict
    probabilities: dict


def train(X, y: Sequence[str], config: TrainConfig = TrainConfig(), labels: Optional[Sequence[str]] = None) -> LinearModel:
    """Fit one binary problem per label (one-vs-rest).

    ``X`` may be an array or a sequence of composed instances. ``labels`` fixes
    the label order (and so the tie-break); by default labels are ordered by
    first appearance in ``y``.
    """
    if not isinstance(X, np.ndarray):
        X = np.vstack([getattr(row, "vector", row) for row in X]) if len(X) else np.zeros((0, 0))
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise TrainingError(f"feature matrix {X.shape} does not match {len(y)} labels")
    if len(y) < 2:
        raise TrainingError("need at least two training instances")
    if not np.isfinite(X).all():
        raise TrainingError("non-finite feature values")
    present = list(dict.fromkeys(y))
    if len(present) < 2:
        raise TrainingError(f"need at least two distinct labels, got only {present}")
    if labels is None:
        labels = present
    labels = tuple(labels)
    if set(present) - set(labels):
        raise TrainingError(f"labels {sorted(set(present) - set(labels))} missing from label order")
    y_arr = np.asarray(y, dtype=object)

    d = X.shape[1]
    weights = np.zeros((len(labels), d))
    # labels with no training instances can never win the argmax
    biases = np.full(len(labels), -np.inf)
    n_iter = [0] * len(labels)
    converged = [True] * len(labels)
    active = [k for k, lab in enumerate(labels) if lab in present]
    if len(active) == 2:
        # the two one-vs-rest problems are mirror images: theta_neg = -theta_pos
        neg, pos = active
        fit = fit_binary(X, np.where(y_arr == labels[pos], 1.0, -1.0), config)
        weights[pos], biases[pos] = fit.weights, fit.bias
        weights[neg], biases[neg] = -fit.weights, -fit.bias
        for k in active:
            n_iter[k], converged[k] = fit.n_iter, fit.converged
    else:
        for k in active:
            target = np.where(y_arr == labels[k], 1.0, -1.0)
            fit = fit_binary(X, target, config)
            weights[k], biases[k] = fit.weights, fit.bias
            n_iter[k], converged[k] = fit.n_iter, fit.converged
    return LinearModel(labels, weights, biases, config, tuple(n_iter), tuple(converged))


def predict(model: LinearModel, x: np.ndarray) -> PredictionScores:
    """Raw per-class scores, per-class sigmoid probabilities and the argmax label."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dimension,):
        raise TrainingError(f"input has shape {x.shape}, model expects ({model.dimension},)")
    s = model.scores(x)
    label = model.labels[int(np.argmax(s))]
    probs = sigmoid(s)
    return PredictionScores(
        label,
        {lab: float(v) for lab, v in zip(model.labels, s)},
        {lab: float(v) for lab, v in zip(model.labels, probs)},
    )


@dataclass(frozen=True)
class MajorityBaseline:
    label: str
    labels: tuple

    def predict(self, X) -> list:
        return [self.label] * len(X)

    def scores(self, n: int = 1) -> np.ndarray:
        row = np.array([1.0 if lab == self.label else 0.0 for lab in self.labels])
        return np.tile(row, (n, 1))


def majority_label(train_labels: Sequence[str], labels: Optional[Sequence[str]] = None) -> str:
    if not train_labels:
        raise TrainingError("majority baseline needs at least one training label")
    counts = Counter(train_labels)
    order = list(labels) if labels is not None else list(dict.fromkeys(train_labels))
    order += [lab for lab in counts if lab not in order]
    best = max(counts.values())
    return next(lab for lab in order if counts.get(lab, 0) == best)


def majority_baseline(train_labels: Sequence[str], labels: Optional[Sequence[str]] = None) -> MajorityBaseline:
    """Constant classifier for the most frequent label (ties -> earliest in ``labels``)."""
    order = tuple(labels) if labels is not None else tuple(dict.fromkeys(train_labels))
    return MajorityBaseline(majority_label(train_labels, order), order)


def majority_closed_form(p: float) -> dict:
    """Expected scores of the majority baseline when its class has test fraction ``p``."""
    return {
        "accuracy": p,
        "f1_majority": 2 * p / (1 + p) if p > 0 else 0.0,
        "f1_minority": 0.0,
    }
