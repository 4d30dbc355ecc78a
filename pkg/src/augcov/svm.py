"""Soft-margin SVM trained by sequential minimal optimization.

The working set is the maximal-violating pair (first-order selection, ties
to the lowest index), so training is fully deterministic for a given input
order. Multi-class problems are handled one-vs-rest with argmax of the
decision values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyClass, SolverStall

KKT_TOL = 1e-3
MAX_SMO_ITER = 100_000


def _kernel_matrix(kind: str, gamma: float | None, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return x @ z.T
    if kind == "rbf":
        sq = (
            np.sum(x ** 2, axis=1)[:, None]
            + np.sum(z ** 2, axis=1)[None, :]
            - 2.0 * (x @ z.T)
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kind!r}")


def default_gamma(features: np.ndarray) -> float:
    """1 / (n_features * feature variance), the scale-free default."""
    var = float(features.var())
    if var <= 0.0:
        var = 1.0
    return 1.0 / (features.shape[1] * var)


@dataclass(frozen=True)
class BinarySvm:
    """One trained binary machine: support vectors and dual state."""

    kernel: str
    gamma: float | None
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    bias: float
    kkt_residual: float

    def decision(self, features: np.ndarray) -> np.ndarray:
        k = _kernel_matrix(self.kernel, self.gamma, np.atleast_2d(features),
                           self.support_vectors)
        return k @ self.dual_coef + self.bias


@dataclass(frozen=True)
class SvmModel:
    """Binary or one-vs-rest multi-class SVM."""

    class_labels: tuple
    machines: tuple  # one BinarySvm for binary, one per class otherwise
    C: float
    kernel: str
    gamma: float | None

    @property
    def is_binary(self) -> bool:
        return len(self.class_labels) == 2


def _violating_sets(alpha: np.ndarray, y: np.ndarray, c: float):
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
    return up, low


def _smo(kernel_mat: np.ndarray, y: np.ndarray, c: float, tol: float = KKT_TOL,
         max_iter: int = MAX_SMO_ITER):
    """Maximal-violating-pair SMO on the dual; returns (alpha, bias, residual).

    Minimizes 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij subject to y'a = 0 and
    0 <= a <= C. grad tracks Qa - e; the violation yg = -y * grad drives
    both pair selection and the stopping rule m(a) - M(a) < tol.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    residual = np.inf

    for _ in range(max_iter):
        yg = -y * grad
        up, low = _violating_sets(alpha, y, c)
        if not up.any() or not low.any():
            residual = 0.0
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        residual = float(yg[i] - yg[j])
        if residual < tol:
            break

        curvature = max(kernel_mat[i, i] + kernel_mat[j, j] - 2.0 * kernel_mat[i, j],
                        1e-12)
        # step t moves alpha_i by +y_i t and alpha_j by -y_j t, preserving y'a
        t_hi = min(
            c - alpha[i] if y[i] > 0 else alpha[i],
            alpha[j] if y[j] > 0 else c - alpha[j],
        )
        step = min(residual / curvature, t_hi)
        if step <= 0.0:
            break
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        grad += y * step * (kernel_mat[:, i] - kernel_mat[:, j])
    else:
        yg = -y * grad
        up, low = _violating_sets(alpha, y, c)
        raise SolverStall(float(np.max(np.where(up, yg, -np.inf))
                                - np.min(np.where(low, yg, np.inf))))

    yg = -y * grad
    free = (alpha > 1e-12) & (alpha < c - 1e-12)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        up, low = _violating_sets(alpha, y, c)
        hi = np.max(np.where(up, yg, -np.inf)) if up.any() else 0.0
        lo = np.min(np.where(low, yg, np.inf)) if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    return alpha, bias, max(residual, 0.0)


def _fit_binary(features, y_signed, c, kernel, gamma) -> BinarySvm:
    kernel_mat = _kernel_matrix(kernel, gamma, features, features)
    alpha, bias, residual = _smo(kernel_mat, y_signed, c)
    sv = alpha > 1e-12
    if not sv.any():
        # degenerate but legal: the decision is the constant bias
        sv = np.zeros_like(sv)
        sv[0] = True
    return BinarySvm(
        kernel=kernel,
        gamma=gamma,
        support_vectors=features[sv].copy(),
        dual_coef=(alpha * y_signed)[sv],
        bias=bias,
        kkt_residual=residual,
    )


def svm_fit(
    features: np.ndarray,
    labels: np.ndarray,
    c: float = 1.0,
    kernel: str = "linear",
    gamma: float | None = None,
) -> SvmModel:
    """Train a (possibly multi-class) SVM on a feature matrix.

    gamma=None uses default_gamma for the rbf kernel and is ignored for the
    linear one. Binary problems orient the decision so the larger label is
    the positive class.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ValueError("features must be n_samples x n_features matching labels")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain NaN or Inf")
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise EmptyClass("need at least two classes")
    if kernel == "rbf" and gamma is None:
        gamma = default_gamma(features)
    if kernel == "linear":
        gamma = None

    if len(classes) == 2:
        y_signed = np.where(labels == classes[1], 1.0, -1.0)
        machines = (_fit_binary(features, y_signed, c, kernel, gamma),)
    else:
        machines = tuple(
            _fit_binary(features, np.where(labels == cls, 1.0, -1.0), c, kernel, gamma)
            for cls in classes
        )
    return SvmModel(classes, machines, c, kernel, gamma)


def svm_decision(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Signed decision value(s): shape (n,) for binary models (positive means
    the second class), (n, n_classes) one-vs-rest scores otherwise."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if model.is_binary:
        return model.machines[0].decision(features)
    return np.stack([m.decision(features) for m in model.machines], axis=1)


def svm_predict(model: SvmModel, features: np.ndarray) -> np.ndarray:
    scores = svm_decision(model, features)
    labels = np.asarray(model.class_labels)
    if model.is_binary:
        return labels[(scores > 0).astype(int)]
    return labels[np.argmax(scores, axis=1)]
