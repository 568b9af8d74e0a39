"""Independent reference implementations used as test oracles."""

import numpy as np


def project_capped_simplex(v, C):
    """Euclidean projection onto {0 <= a <= C, sum a = 1}.

    The mass s(tau) = sum clip(v - tau, 0, C) is piecewise linear and
    non-increasing in tau with kinks at v and v - C; locate the kink interval
    holding s = 1 and interpolate inside it.
    """
    kinks = np.unique(np.r_[v, v - C])
    mass = np.clip(v[None, :] - kinks[:, None], 0.0, C).sum(axis=1)
    k = np.searchsorted(-mass, -1.0)  # first kink with mass <= 1
    if k == 0:
        tau = kinks[0]
    elif k == kinks.size:
        tau = kinks[-1]
    else:
        t0, t1, m0, m1 = kinks[k - 1], kinks[k], mass[k - 1], mass[k]
        tau = t0 + (m0 - 1.0) * (t1 - t0) / (m0 - m1)
    return np.clip(v - tau, 0.0, C)


def ocsvm_dual_fista(K, nu, iters=20000, tol=1e-15):
    """Accelerated projected gradient on 0.5 a'Ka over the capped simplex."""
    n = K.shape[0]
    C = 1.0 / (nu * n)
    step = 1.0 / max(np.linalg.eigvalsh(K)[-1], 1e-12)
    a = project_capped_simplex(np.full(n, 1.0 / n), C)
    y, t = a.copy(), 1.0
    for _ in range(iters):
        a_next = project_capped_simplex(y - step * (K @ y), C)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = a_next + (t - 1) / t_next * (a_next - a)
        done = np.abs(a_next - a).max() < tol
        a, t = a_next, t_next
        if done:
            break
    return a, 0.5 * a @ K @ a


def pca_by_covariance(X, m):
    """Top-m eigenpairs of the unbiased sample covariance (columns are vectors)."""
    vals, vecs = np.linalg.eigh(np.cov(X, rowvar=False))
    order = np.argsort(vals)[::-1][:m]
    return vals[order], vecs[:, order]


def principal_angles(A, B):
    """Principal angles between the column spans of A and B (radians)."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    # sine form: accurate for tiny angles, unlike arccos of the cosines
    sines = np.linalg.svd(qb - qa @ (qa.T @ qb), compute_uv=False)
    return np.arcsin(np.clip(sines, 0.0, 1.0))


def numeric_gradient(f, x, h=1e-6):
    """Central differences of scalar f with respect to array x (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def ocsvm_kkt_residual(K, alpha, nu):
    """Largest violation of the one-class dual optimality conditions.

    At the optimum there is a rho with grad_i >= rho where alpha_i = 0,
    grad_i <= rho where alpha_i = C and grad_i = rho in between.
    """
    n = K.shape[0]
    C = 1.0 / (nu * n)
    g = K @ alpha
    tol = 1e-12 * C
    can_grow = alpha < C - tol
    can_shrink = alpha > tol
    return max(0.0, g[can_shrink].max() - g[can_grow].min())
