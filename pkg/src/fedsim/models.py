"""Model families: ridge regression, l2 logistic regression, small MLPs.

Each family provides batch loss/gradient evaluation on a flat parameter
vector. Ridge additionally has closed forms (exact curvature constants, exact
empirical minimizer, exact population risk under Gaussian linear data) that
the verification lab builds on. The l2 term is part of the per-sample loss,
so it appears exactly once in a batch-averaged loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .params import BlockLayout, ParamVector, Role, layout_from_sizes

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class RidgeSpec:
    """Squared loss 0.5*(x.theta - y)^2 plus (l2/2)*||theta||^2 per sample."""

    input_dim: int
    l2: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1.")
        if self.l2 < 0.0:
            raise ValueError("l2 must be >= 0.")


@dataclass(frozen=True)
class LogisticL2Spec:
    """Logistic loss on labels in {-1, +1} plus (l2/2)*||theta||^2 per sample."""

    input_dim: int
    l2: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1.")
        if self.l2 < 0.0:
            raise ValueError("l2 must be >= 0.")


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected net with softmax cross-entropy on integer class labels.

    hidden lists the hidden-layer widths; every layer is one parameter block
    (weights then bias). The l2 penalty covers all parameters.
    """

    input_dim: int
    hidden: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    l2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1.")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1.")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2.")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}.")
        if self.l2 < 0.0:
            raise ValueError("l2 must be >= 0.")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.num_classes)

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1


ModelSpec = RidgeSpec | LogisticL2Spec | MlpSpec


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: ParamVector


def build_layout(model: ModelSpec, representation_layers: int = 0) -> BlockLayout:
    """Layout for a model's flat parameter vector.

    The first representation_layers layer blocks get the representation role,
    the rest are head blocks. Linear families have a single block, so the
    split degenerates to choosing that block's role (0 -> head).
    """
    if isinstance(model, (RidgeSpec, LogisticL2Spec)):
        if representation_layers not in (0, 1):
            raise ValueError("linear models have one layer; split must be 0 or 1.")
        role = Role.REPRESENTATION if representation_layers == 1 else Role.HEAD
        return layout_from_sizes([("coef", model.input_dim, role)])
    if not 0 <= representation_layers <= model.num_layers:
        raise ValueError(
            f"representation_layers must be in [0, {model.num_layers}]."
        )
    sizes = []
    widths = model.widths
    for i in range(model.num_layers):
        n = widths[i] * widths[i + 1] + widths[i + 1]
        role = Role.REPRESENTATION if i < representation_layers else Role.HEAD
        sizes.append((f"layer{i}", n, role))
    return layout_from_sizes(sizes)


def init_params(model: ModelSpec, layout: BlockLayout, rng: np.random.Generator) -> ParamVector:
    """Deterministic-under-seed initial parameters.

    Linear families start at zero. MLP weights are Glorot-scaled normals drawn
    layer by layer from rng; biases start at zero.
    """
    theta = np.zeros(layout.total_params)
    if isinstance(model, MlpSpec):
        widths = model.widths
        offset = 0
        for i in range(model.num_layers):
            fan_in, fan_out = widths[i], widths[i + 1]
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            w = rng.standard_normal((fan_in, fan_out)) * scale
            theta[offset : offset + fan_in * fan_out] = w.ravel()
            offset += fan_in * fan_out + fan_out  # biases stay zero
    return ParamVector(theta, layout)


def _check_batch(model: ModelSpec, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-d array of samples.")
    if X.shape[1] != model.input_dim:
        raise ValueError(f"features have dim {X.shape[1]}, model expects {model.input_dim}.")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be a vector matching the batch size.")
    if X.shape[0] == 1:
        # single-row matmuls can hit a different BLAS kernel than multi-row
        # ones; evaluating the exact 2-fold duplicate keeps batch means
        # bitwise invariant under sample duplication for every batch size
        X = np.concatenate([X, X])
        y = np.concatenate([y, y])
    return X, y


def _halving_sum(a: np.ndarray):
    """Sum over axis 0 by recursive halving: S(A) = S(A[:n//2]) + S(A[n//2:]).

    Duplicating a batch as [A; A] splits exactly at the copy boundary, so the
    sum doubles exactly and batch means are bitwise invariant under sample
    duplication (a library reduction does not guarantee that).
    """
    n = a.shape[0]
    if n == 1:
        return a[0]
    h = n // 2
    return _halving_sum(a[:h]) + _halving_sum(a[h:])


def _ridge_eval(model, theta, X, y, need_grad):
    r = X @ theta - y
    value = float(_halving_sum(0.5 * r * r)) / X.shape[0] + 0.5 * model.l2 * float(
        np.dot(theta, theta)
    )
    if not need_grad:
        return value, None
    grad = _halving_sum(X * r[:, None]) / X.shape[0] + model.l2 * theta
    return value, grad


def _logistic_eval(model, theta, X, y, need_grad):
    if not np.all(np.abs(y) == 1):
        raise ValueError("logistic labels must be -1 or +1.")
    yf = y.astype(np.float64)
    t = yf * (X @ theta)
    value = float(_halving_sum(np.logaddexp(0.0, -t))) / X.shape[0] + 0.5 * model.l2 * float(
        np.dot(theta, theta)
    )
    if not need_grad:
        return value, None
    # sigmoid(-t) via tanh is stable for large |t|
    s = 0.5 * (1.0 - np.tanh(0.5 * t))
    grad = _halving_sum(X * (-yf * s)[:, None]) / X.shape[0] + model.l2 * theta
    return value, grad


def _mlp_views(model: MlpSpec, theta: np.ndarray):
    widths = model.widths
    views = []
    offset = 0
    for i in range(model.num_layers):
        fan_in, fan_out = widths[i], widths[i + 1]
        w = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = theta[offset : offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views


def _mlp_eval(model, theta, X, y, need_grad):
    labels = y.astype(np.int64)
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError("class labels out of range.")
    layers = _mlp_views(model, theta)
    n = X.shape[0]

    acts = [X]
    pre = []
    a = X
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        if i < len(layers) - 1:
            a = np.maximum(z, 0.0) if model.activation == "relu" else np.tanh(z)
            acts.append(a)
    logits = pre[-1]
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    data_loss = float(_halving_sum(lse - logits[np.arange(n), labels])) / n
    value = data_loss + 0.5 * model.l2 * float(np.dot(theta, theta))
    if not need_grad:
        return value, None

    grad = np.zeros_like(theta)
    gviews = _mlp_views(model, grad)
    probs = np.exp(logits - zmax)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = gviews[i]
        # contract the sample axis by halving, not BLAS, for duplication invariance
        gw[:] = _halving_sum(acts[i][:, :, None] * delta[:, None, :])
        gb[:] = _halving_sum(delta)
        if i > 0:
            upstream = delta @ layers[i][0].T
            if model.activation == "relu":
                delta = upstream * (pre[i - 1] > 0.0)
            else:
                delta = upstream * (1.0 - np.tanh(pre[i - 1]) ** 2)
    grad += model.l2 * theta
    return value, grad


_EVALS = {RidgeSpec: _ridge_eval, LogisticL2Spec: _logistic_eval, MlpSpec: _mlp_eval}


def loss_and_grad(model: ModelSpec, params: ParamVector, X, y) -> LossEval:
    """Batch-mean loss and gradient at params."""
    X, y = _check_batch(model, X, y)
    value, grad = _EVALS[type(model)](model, params.values, X, y, True)
    if not np.isfinite(value):
        raise ValueError("loss is non-finite.")
    return LossEval(value, ParamVector(grad, params.layout))


def batch_loss(model: ModelSpec, params: ParamVector, X, y) -> float:
    """Batch-mean loss only. Same value path as loss_and_grad."""
    X, y = _check_batch(model, X, y)
    value, _ = _EVALS[type(model)](model, params.values, X, y, False)
    if not np.isfinite(value):
        raise ValueError("loss is non-finite.")
    return value


def predict(model: ModelSpec, params: ParamVector, X) -> np.ndarray:
    """Model outputs: regression values for ridge, class labels otherwise."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(model, RidgeSpec):
        return X @ params.values
    if isinstance(model, LogisticL2Spec):
        return np.where(X @ params.values >= 0.0, 1, -1)
    layers = _mlp_views(model, params.values)
    a = X
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        if i < len(layers) - 1:
            a = np.maximum(z, 0.0) if model.activation == "relu" else np.tanh(z)
    return np.argmax(z, axis=1)


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Self-contained on purpose: the exact curvature constants flow into bound
    verification, so they are computed by a route independent of the library
    eigensolver the tests use as an oracle.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square.")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, float(np.abs(a).max()))):
        raise ValueError("matrix must be symmetric.")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return a[0].copy()
    scale = max(1.0, float(np.abs(np.diag(a)).max()))
    for _ in range(max_sweeps):
        off = float(np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0.0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    else:
        raise RuntimeError("Jacobi sweep limit reached without convergence.")
    return np.sort(np.diag(a).copy())


def mu_L_exact(model: RidgeSpec, X) -> tuple[float, float]:
    """Strong-convexity and smoothness constants of the ridge empirical risk.

    The Hessian is (1/n) X^T X + l2*I, constant in theta, so mu and L are its
    extreme eigenvalues.
    """
    if not isinstance(model, RidgeSpec):
        raise ValueError("exact curvature constants are defined for ridge only.")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty sample matrix.")
    h = X.T @ X / X.shape[0] + model.l2 * np.eye(model.input_dim)
    ev = jacobi_eigenvalues(h)
    return float(ev[0]), float(ev[-1])


def erm_closed_form(model: RidgeSpec, X, y, layout: BlockLayout | None = None) -> ParamVector:
    """Exact minimizer of the ridge empirical risk on (X, y).

    Solves ((1/n) X^T X + l2*I) theta = (1/n) X^T y by Cholesky. Requires a
    positive-definite system (always true for l2 > 0).
    """
    if not isinstance(model, RidgeSpec):
        raise ValueError("closed-form ERM is defined for ridge only.")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise ValueError("need non-empty X with matching y.")
    n = X.shape[0]
    h = X.T @ X / n + model.l2 * np.eye(model.input_dim)
    b = X.T @ y / n
    try:
        theta = cho_solve(cho_factor(h), b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("ERM system is singular; needs l2 > 0 or full-rank data.") from exc
    if layout is None:
        layout = build_layout(model)
    return ParamVector(theta, layout)


def population_risk_closed_form(
    model: RidgeSpec,
    params: ParamVector,
    covariance: np.ndarray,
    true_coef: np.ndarray,
    noise_std: float,
) -> float:
    """Exact population risk of ridge under x ~ N(0, Sigma), y = x.coef + noise.

    Expands to 0.5*(theta-coef)^T Sigma (theta-coef) + 0.5*noise^2
    + (l2/2)*||theta||^2.
    """
    if not isinstance(model, RidgeSpec):
        raise ValueError("closed-form population risk is defined for ridge only.")
    theta = params.values
    d = theta - np.asarray(true_coef, dtype=np.float64)
    sigma = np.asarray(covariance, dtype=np.float64)
    return (
        0.5 * float(d @ sigma @ d)
        + 0.5 * float(noise_std) ** 2
        + 0.5 * model.l2 * float(np.dot(theta, theta))
    )
