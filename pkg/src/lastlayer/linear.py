"""Multinomial logistic training with optional per-example weights and L1 penalty.

The training objective is

    (1 / sum w) * sum_i w_i * loss_i(theta)  +  penalty * ||W||_1

minimized by full-batch proximal gradient with a backtracking line search.
Soft-thresholding applies to the weight matrix only, never the bias, and the
normalization by total weight keeps the penalty comparable across dataset
sizes.  Everything is deterministic: zero or warm-start initialization and no
internal randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateDataError,
    DivergenceError,
    FormatError,
    ParameterError,
    ShapeError,
    ValidationError,
)

LOSSES = ("cross_entropy", "alpha_loss")

_P_FLOOR = 1e-300  # keeps log() finite; far below any probability that matters


@dataclass(frozen=True)
class LinearModel:
    """Linear softmax classifier: scores = X @ weights + bias."""

    weights: np.ndarray  # (d, num_classes)
    bias: np.ndarray  # (num_classes,)

    def __post_init__(self):
        W = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if W.ndim != 2:
            raise ValidationError(f"weights must be 2-D, got shape {W.shape}")
        if b.shape != (W.shape[1],):
            raise ValidationError(f"bias must have shape ({W.shape[1]},), got {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValidationError("model parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)
        W.setflags(write=False)
        b.setflags(write=False)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class StepPolicy:
    """Backtracking line-search parameters for the proximal optimizer."""

    init: float = 1.0
    shrink: float = 0.5
    grow: float = 2.0
    max_step: float = 1e6
    max_backtracks: int = 60


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs.

    ``alpha`` is only consulted when ``loss == "alpha_loss"``; at alpha = 1 the
    loss coincides with cross-entropy.  ``example_weights`` are normalized by
    their sum, so scaling them all by a constant changes nothing.
    ``max_steps_override`` and ``learning_rate`` carry the fixed-step
    fine-tuning budget when a config describes that mode; ``train`` ignores
    them.
    """

    loss: str = "cross_entropy"
    alpha: float = 1.0
    l1_penalty: float = 0.0
    example_weights: np.ndarray | None = None
    max_iters: int = 500
    tol: float = 1e-8
    step_policy: StepPolicy = field(default_factory=StepPolicy)
    warm_start: LinearModel | None = None
    max_steps_override: int | None = None
    learning_rate: float | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ParameterError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.l1_penalty < 0:
            raise ParameterError(f"l1_penalty must be >= 0, got {self.l1_penalty}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        if self.example_weights is not None:
            w = np.asarray(self.example_weights, dtype=np.float64)
            if w.ndim != 1:
                raise ParameterError("example_weights must be a vector")
            if np.any(w < 0) or not np.any(w > 0):
                raise ParameterError("example_weights must be >= 0 with at least one > 0")


def softmax(scores: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):  # inf scores yield nan rows, caught by callers
        z = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def _check_dims(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ShapeError(f"features must be (n, {model.d}), got {X.shape}")
    return X


def predict_proba(model: LinearModel, features) -> np.ndarray:
    """Per-row class probabilities (rows sum to 1)."""
    X = _check_dims(model, features)
    return softmax(X @ model.weights + model.bias)


def predict(model: LinearModel, features) -> np.ndarray:
    """Argmax class per row; score ties break to the smallest class id."""
    X = _check_dims(model, features)
    scores = X @ model.weights + model.bias
    return scores.argmax(axis=1).astype(np.int32)


def alpha_loss(alpha: float, prob_of_true_class):
    """Tunable classification loss; recovers cross-entropy in the alpha->1 limit.

    For alpha != 1 this is (alpha/(alpha-1)) * (1 - p^((alpha-1)/alpha)); at
    alpha = 1 exactly it evaluates -log(p).  Decreasing in p, and 0 at p = 1.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    p = np.asarray(prob_of_true_class, dtype=np.float64)
    p = np.clip(p, _P_FLOOR, None)
    if alpha == 1.0:
        return -np.log(p)
    beta = (alpha - 1.0) / alpha
    return (alpha / (alpha - 1.0)) * (-np.expm1(beta * np.log(p)))


def per_example_loss(model: LinearModel, features, labels, loss: str = "cross_entropy", alpha: float = 1.0):
    """Per-row loss of the model on (features, labels); non-negative."""
    if loss not in LOSSES:
        raise ParameterError(f"loss must be one of {LOSSES}, got {loss!r}")
    X = _check_dims(model, features)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError(f"labels must be a length-{X.shape[0]} vector, got shape {y.shape}")
    probs = softmax(X @ model.weights + model.bias)
    p_true = np.clip(probs[np.arange(X.shape[0]), y], _P_FLOOR, None)
    if loss == "cross_entropy":
        return -np.log(p_true)
    return alpha_loss(alpha, p_true)


def data_term(W, b, X, y, weights, loss, alpha):
    """Weighted mean loss at parameters (W, b)."""
    probs = softmax(X @ W + b)
    p_true = np.clip(probs[np.arange(X.shape[0]), y], _P_FLOOR, None)
    if loss == "cross_entropy" or (loss == "alpha_loss" and alpha == 1.0):
        li = -np.log(p_true)
    else:
        beta = (alpha - 1.0) / alpha
        li = (alpha / (alpha - 1.0)) * (-np.expm1(beta * np.log(p_true)))
    return float(np.dot(weights, li) / weights.sum())


def data_term_grad(W, b, X, y, weights, loss, alpha):
    """Value and analytic gradient of the weighted mean loss.

    The per-row logit gradient is ``s_i * (p_row - onehot(y_i))`` where s_i is
    1 for cross-entropy and ``p_true^((alpha-1)/alpha)`` for the tunable loss.
    """
    n = X.shape[0]
    rows = np.arange(n)
    probs = softmax(X @ W + b)
    p_true = np.clip(probs[rows, y], _P_FLOOR, None)
    if loss == "cross_entropy" or (loss == "alpha_loss" and alpha == 1.0):
        li = -np.log(p_true)
        scale = np.ones(n)
    else:
        beta = (alpha - 1.0) / alpha
        li = (alpha / (alpha - 1.0)) * (-np.expm1(beta * np.log(p_true)))
        scale = p_true**beta
    wsum = weights.sum()
    value = float(np.dot(weights, li) / wsum)
    resid = probs
    resid[rows, y] -= 1.0
    resid *= (weights * scale)[:, None]
    resid /= wsum
    gW = X.T @ resid
    gb = resid.sum(axis=0)
    return value, gW, gb


def soft_threshold(A: np.ndarray, t: float) -> np.ndarray:
    return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)


def train(
    features,
    labels,
    config: TrainConfig,
    num_classes: int | None = None,
    objective_log: list | None = None,
) -> LinearModel:
    """Fit a linear softmax model by proximal gradient with backtracking.

    The penalized objective is non-increasing across accepted iterations and
    optimization stops when its relative change drops below ``config.tol`` or
    after ``config.max_iters`` accepted steps.  Pass ``objective_log`` to
    collect the accepted objective values.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {X.shape}")
    n, d = X.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"labels must be a length-{n} vector, got shape {y.shape}")

    if config.example_weights is not None:
        w = np.ascontiguousarray(config.example_weights, dtype=np.float64)
        if w.shape != (n,):
            raise ShapeError(f"example_weights must be a length-{n} vector, got shape {w.shape}")
    else:
        w = np.ones(n)

    if config.warm_start is not None:
        model = config.warm_start
        if model.d != d:
            raise ShapeError(f"warm start expects d={model.d}, data has d={d}")
        C = model.num_classes
        W = model.weights.copy()
        b = model.bias.copy()
    else:
        present = np.unique(y[w > 0])
        if present.size < 2:
            raise DegenerateDataError(
                f"training data carries {present.size} distinct class(es); need >= 2 or a warm start"
            )
        C = int(num_classes) if num_classes is not None else int(y.max()) + 1
        W = np.zeros((d, C))
        b = np.zeros(C)
    if y.size and (y.min() < 0 or y.max() >= C):
        raise ValidationError(f"labels must lie in [0, {C})")

    c = config.l1_penalty
    policy = config.step_policy
    loss, alpha = config.loss, config.alpha

    value, gW, gb = data_term_grad(W, b, X, y, w, loss, alpha)
    objective = value + c * np.abs(W).sum()
    if not np.isfinite(objective):
        raise DivergenceError(f"initial objective is not finite ({objective})")
    if objective_log is not None:
        objective_log.append(objective)

    t = policy.init
    for _ in range(config.max_iters):
        accepted = False
        for _ in range(policy.max_backtracks):
            W1 = soft_threshold(W - t * gW, t * c)
            b1 = b - t * gb
            value1 = data_term(W1, b1, X, y, w, loss, alpha)
            dW = W1 - W
            db = b1 - b
            gap = (dW * dW).sum() + (db * db).sum()
            bound = value + (gW * dW).sum() + (gb * db).sum() + gap / (2.0 * t)
            if np.isfinite(value1) and value1 <= bound + 1e-12 * (1.0 + abs(value)):
                accepted = True
                break
            t *= policy.shrink
        if not accepted:
            break  # step size hit the numerical floor; current point is as good as it gets

        new_objective = value1 + c * np.abs(W1).sum()
        if not np.isfinite(new_objective):
            raise DivergenceError(f"objective diverged to {new_objective}")
        W, b = W1, b1
        if objective_log is not None:
            objective_log.append(new_objective)
        converged = abs(objective - new_objective) <= config.tol * max(1.0, abs(objective))
        objective = new_objective
        if converged:
            break
        value, gW, gb = data_term_grad(W, b, X, y, w, loss, alpha)
        t = min(t * policy.grow, policy.max_step)

    return LinearModel(weights=W, bias=b)


def finetune(model: LinearModel, features, labels, steps: int, lr: float) -> LinearModel:
    """Run exactly ``steps`` fixed-step gradient iterations of mean cross-entropy.

    No penalty, no line search: the plain warm-started descent used for the
    high-loss-subset correction stage.  ``steps == 0`` (or ``lr == 0``) returns
    the parameters unchanged.
    """
    if steps < 0:
        raise ParameterError(f"steps must be >= 0, got {steps}")
    X = _check_dims(model, features)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError(f"labels must be a length-{X.shape[0]} vector, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise ValidationError(f"labels must lie in [0, {model.num_classes})")
    W = model.weights.copy()
    b = model.bias.copy()
    ones = np.ones(X.shape[0])
    for step in range(steps):
        value, gW, gb = data_term_grad(W, b, X, y, ones, "cross_entropy", 1.0)
        if not (np.isfinite(value) and np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise DivergenceError(f"fine-tuning loss became non-finite at step {step}")
        with np.errstate(over="ignore"):  # overflow shows up as inf and is caught next step
            W -= lr * gW
            b -= lr * gb
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise DivergenceError(f"fine-tuning parameters became non-finite at step {steps - 1}")
    return LinearModel(weights=W, bias=b)


# ---------------------------------------------------------------------------
# Model dump: CSV of (d+1) x num_classes values (bias last row) plus a JSON
# sidecar with the dimensions and the training loss kind.
# ---------------------------------------------------------------------------


def save_model(model: LinearModel, path, loss: str = "cross_entropy") -> None:
    path = Path(path)
    lines = []
    for i in range(model.d):
        lines.append(",".join(repr(float(v)) for v in model.weights[i]))
    lines.append(",".join(repr(float(v)) for v in model.bias))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"num_classes": model.num_classes, "d": model.d, "loss": loss}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_model(path) -> LinearModel:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    rows = [
        [float(v) for v in line.split(",")]
        for line in path.read_text().strip().splitlines()
    ]
    arr = np.array(rows, dtype=np.float64)
    if arr.shape != (meta["d"] + 1, meta["num_classes"]):
        raise FormatError(
            f"model CSV has shape {arr.shape}, sidecar implies {(meta['d'] + 1, meta['num_classes'])}"
        )
    return LinearModel(weights=arr[:-1], bias=arr[-1])
