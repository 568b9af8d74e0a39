"""One-class SVM with an RBF kernel, solved in the dual by pairwise updates.

The dual problem solved is

    min_a  0.5 * a^T K a    s.t.  0 <= a_i <= 1/(nu n),  sum_i a_i = 1

and the decision function is ``sum_i a_i k(x_i, x) - rho``.  Scores >= 0
are normal; negative scores are anomalies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeaderError, ValidationError
from .subspace import KIND_OCSVM, read_container, write_container

log = logging.getLogger(__name__)

NORMAL, ANOMALY = 0, 1


@dataclass(frozen=True)
class KernelSpec:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValidationError("only the RBF kernel is supported")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValidationError("kernel gamma must be finite and positive")


def default_gamma(X):
    """1 / (M * mean per-feature variance)."""
    X = np.asarray(X, dtype=np.float64)
    var = X.var(axis=0).mean() if X.shape[0] > 1 else 0.0
    if not var > 0:
        return 1.0 / X.shape[1]
    return 1.0 / (X.shape[1] * var)


def rbf_kernel(x, y, gamma):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError("kernel arguments must have equal dimension")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray  # (k, M)
    alphas: np.ndarray  # (k,)
    rho: float
    nu: float
    rbf_gamma: float
    n_train: int
    n_iter: int = 0
    kkt_gap: float = 0.0


@dataclass
class DualSolution:
    alpha: np.ndarray
    grad: np.ndarray  # K @ alpha
    rho: float
    n_iter: int
    gap: float


def dual_objective(K, alpha):
    return 0.5 * float(alpha @ K @ alpha)


def kkt_gap(grad, alpha, C, eps=1e-12):
    """Maximal violation: max grad over a>0 minus min grad over a<C."""
    up = alpha < C - eps
    low = alpha > eps
    if not up.any() or not low.any():
        return 0.0
    return float(grad[low].max() - grad[up].min())


def solve_dual(K, nu, tol=1e-6, max_iter=1_000_000):
    """Pairwise working-set solver for the one-class dual."""
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    C = 1.0 / (nu * n)
    # feasible start: fill the first floor(nu n) coordinates to the bound
    alpha = np.zeros(n)
    k = min(int(nu * n), n)
    alpha[:k] = C
    if k < n:
        alpha[k] = 1.0 - k * C
    alpha = np.clip(alpha, 0.0, C)
    grad = K @ alpha
    diag = np.diag(K)
    eps = 1e-12 * C

    it = 0
    gap = 0.0
    while it < max_iter:
        up = alpha < C - eps
        low = alpha > eps
        if not up.any() or not low.any():
            gap = 0.0
            break
        gu = np.where(up, grad, np.inf)
        gl = np.where(low, grad, -np.inf)
        i = int(np.argmin(gu))  # coordinate to increase
        j = int(np.argmax(gl))  # coordinate to decrease
        gap = gl[j] - gu[i]
        if gap < tol:
            break
        curv = diag[i] + diag[j] - 2.0 * K[i, j]
        if curv <= 0:
            curv = 1e-12
        delta = min(gap / curv, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        if C - alpha[i] < eps:
            alpha[i] = C
        if alpha[j] < eps:
            alpha[j] = 0.0
        grad += delta * (K[:, i] - K[:, j])
        it += 1
    else:
        log.warning("ocSVM solver hit max_iter=%d (gap %.3g)", max_iter, gap)

    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        rho = float(grad[free].mean())
    else:
        # no free SV: midpoint of the feasible rho interval
        at_upper = alpha >= C - eps
        at_zero = alpha <= eps
        lb = grad[at_upper].max() if at_upper.any() else grad.min()
        ub = grad[at_zero].min() if at_zero.any() else grad.max()
        rho = float(0.5 * (lb + ub))
    return DualSolution(alpha, grad, rho, it, float(gap))


def ocsvm_fit(X, nu=0.1, kernel=None, tol=1e-6, max_iter=1_000_000):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("X must be a non-empty (n, M) matrix")
    if not 0 < nu <= 1:
        raise ValidationError("nu must lie in (0, 1]")
    n = X.shape[0]
    if n == 1:
        log.warning("fitting a one-class SVM on a single point")
    if kernel is None:
        kernel = KernelSpec(default_gamma(X))
    elif not isinstance(kernel, KernelSpec):
        kernel = KernelSpec(float(kernel))
    K = rbf_matrix(X, X, kernel.gamma)
    sol = solve_dual(K, nu, tol, max_iter)
    sv = sol.alpha > 0
    return OcsvmModel(
        support_vectors=X[sv].copy(),
        alphas=sol.alpha[sv].copy(),
        rho=sol.rho,
        nu=float(nu),
        rbf_gamma=kernel.gamma,
        n_train=n,
        n_iter=sol.n_iter,
        kkt_gap=sol.gap,
    )


def decision(model, X):
    """Score rows of ``X`` (or a single vector); >= 0 means normal."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        return np.empty(0)
    if X.shape[1] != model.support_vectors.shape[1]:
        raise ValidationError(
            f"expected {model.support_vectors.shape[1]} features, got {X.shape[1]}"
        )
    scores = rbf_matrix(X, model.support_vectors, model.rbf_gamma) @ model.alphas - model.rho
    return float(scores[0]) if single else scores


def predict(model, X):
    """1 (anomaly) where the score is negative, else 0 (normal)."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return np.empty(0, dtype=np.int8)
    return (decision(model, np.atleast_2d(X)) < 0).astype(np.int8)


def save_ocsvm(model, path):
    write_container(
        path, KIND_OCSVM,
        [model.support_vectors, model.alphas],
        [model.nu, model.rbf_gamma, model.rho, model.n_train],
    )


def load_ocsvm(path):
    kind, scalars, arrays = read_container(path)
    if kind != KIND_OCSVM:
        raise MalformedHeaderError(f"container kind {kind} is not an ocSVM model")
    nu, gamma, rho, n = scalars
    sv, alphas = arrays
    return OcsvmModel(sv.reshape(len(alphas), -1), alphas, rho, nu, gamma, int(n))
