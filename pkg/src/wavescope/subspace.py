"""PCA via full SVD and FastICA with eigen-decomposition whitening."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MalformedHeaderError, UnsupportedVersionError, ValidationError

log = logging.getLogger(__name__)

RIDGE = 1e-12


def _as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("expected a 2-D (n, d) matrix")
    return X


def _sign_fix(rows):
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (M, d) orthonormal rows
    eigenvalues: np.ndarray  # (M,) descending
    total_variance: float
    n_samples: int
    rank_deficient: bool = False

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def n_features(self):
        return self.components.shape[1]


def pca_fit(X, n_components):
    X = _as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValidationError("PCA needs at least two samples")
    if not 1 <= n_components <= min(n - 1, d):
        raise ValidationError(f"n_components must lie in [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    eig = s**2 / (n - 1)
    total = float(eig.sum())
    tol = eig[0] * max(n, d) * np.finfo(float).eps if eig.size else 0.0
    rank = int(np.sum(eig > tol))
    deficient = n_components > rank
    if deficient:
        log.warning("n_components=%d exceeds numerical rank %d", n_components, rank)
    return PcaModel(
        mean=mean,
        components=_sign_fix(vt[:n_components]),
        eigenvalues=eig[:n_components].copy(),
        total_variance=total,
        n_samples=n,
        rank_deficient=deficient,
    )


def _check_cols(model_dim, X, what="columns"):
    if X.shape[1] != model_dim:
        raise ValidationError(f"expected {model_dim} {what}, got {X.shape[1]}")


def pca_transform(model, X):
    X = _as_matrix(X)
    _check_cols(model.n_features, X)
    return (X - model.mean) @ model.components.T


def pca_inverse(model, Y):
    Y = _as_matrix(Y)
    _check_cols(model.n_components, Y, "components")
    return Y @ model.components + model.mean


def explained_variance_ratio(model):
    if model.total_variance == 0:
        return np.zeros_like(model.eigenvalues)
    return model.eigenvalues / model.total_variance


# ---------------------------------------------------------------------------
# whitening / ICA


def _cov_eigh(Xc):
    """Descending eigenpairs of the sample covariance of centred ``Xc``.

    Uses the n x n Gram matrix when there are fewer samples than features.
    """
    n, d = Xc.shape
    if d <= n:
        vals, vecs = np.linalg.eigh(Xc.T @ Xc / (n - 1))
        order = np.argsort(vals)[::-1]
        return vals[order], vecs[:, order]
    vals, u = np.linalg.eigh(Xc @ Xc.T / (n - 1))
    order = np.argsort(vals)[::-1]
    vals, u = vals[order], u[:, order]
    keep = vals > vals[0] * n * np.finfo(float).eps
    vals, u = vals[keep], u[:, keep]
    vecs = Xc.T @ u / np.sqrt(vals * (n - 1))
    return vals, vecs


def whiten(X):
    """Zero-mean, identity-covariance version of ``X`` and the map E D^-1/2 E^T."""
    X = _as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValidationError("whitening needs at least two samples")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    tr = np.trace(cov)
    if tr == 0:
        raise ValidationError("all features have zero variance")
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 0.0) + RIDGE * tr
    W = (vecs / np.sqrt(vals)) @ vecs.T
    return Xc @ W.T, W


@dataclass(frozen=True)
class IcaModel:
    mean: np.ndarray
    whitening: np.ndarray  # (m, d)
    unmixing: np.ndarray  # (m, m) orthogonal
    dewhitening: np.ndarray  # (d, m) pseudo-inverse of `whitening`
    converged: bool
    n_iter: int

    @property
    def components(self):
        """Composed forward map (m, d): sources = components @ (x - mean)."""
        return self.unmixing @ self.whitening

    @property
    def mixing(self):
        return self.dewhitening @ self.unmixing.T

    @property
    def n_components(self):
        return self.unmixing.shape[0]

    @property
    def n_features(self):
        return self.whitening.shape[1]


def _sym_decorrelate(W):
    s, u = np.linalg.eigh(W @ W.T)
    s = np.maximum(s, np.finfo(float).tiny)
    return (u / np.sqrt(s)) @ u.T @ W


def fastica_fit(X, n_components, tol=1e-4, max_iter=500, seed=0):
    """Symmetric FastICA with the log-cosh contrast.

    Convergence is declared when ``max |1 - |<w_new, w_old>|| < tol`` over the
    rows of the unmixing rotation.  Without convergence the last iterate is
    kept and ``converged`` is False.
    """
    X = _as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValidationError("ICA needs at least two samples")
    mean = X.mean(axis=0)
    Xc = X - mean
    vals, vecs = _cov_eigh(Xc)
    if vals.size == 0 or vals[0] <= 0:
        raise ValidationError("all features have zero variance")
    if not 1 <= n_components <= vals.size:
        raise ValidationError(f"n_components must lie in [1, {vals.size}] (data rank)")
    vals = vals[:n_components] + RIDGE * vals.sum()
    vecs = vecs[:, :n_components]
    K = vecs.T / np.sqrt(vals)[:, None]  # (m, d)
    dewhite = vecs * np.sqrt(vals)[None, :]  # (d, m)
    Z = Xc @ K.T  # (n, m), unit covariance

    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((n_components, n_components)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Y = Z @ W.T
        G = np.tanh(Y)
        g_prime = 1.0 - G**2
        W_new = (G.T @ Z) / n - g_prime.mean(axis=0)[:, None] * W
        W_new = _sym_decorrelate(W_new)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("FastICA did not converge in %d iterations", max_iter)

    # sign convention on the composed forward map
    comp = W @ K
    idx = np.argmax(np.abs(comp), axis=1)
    signs = np.sign(comp[np.arange(comp.shape[0]), idx])
    signs[signs == 0] = 1.0
    W = W * signs[:, None]
    return IcaModel(mean, K, W, dewhite, converged, it)


def ica_transform(model, X):
    X = _as_matrix(X)
    _check_cols(model.n_features, X)
    return (X - model.mean) @ model.components.T


def ica_inverse(model, S):
    S = _as_matrix(S)
    _check_cols(model.n_components, S, "components")
    return S @ model.mixing.T + model.mean


# ---------------------------------------------------------------------------
# persistence: b"WSUB", u16 version, u8 kind, u32 ndims, u32 dims..., f64 payload

MAGIC = b"WSUB"
VERSION = 1
KIND_PCA, KIND_ICA, KIND_OCSVM = 0, 1, 2


def write_container(path, kind, arrays, scalars=()):
    """Write named f64 arrays (row-major) and scalars into a WSUB container."""
    parts = [MAGIC, struct.pack("<HB", VERSION, kind)]
    parts.append(struct.pack("<I", len(scalars)))
    parts.append(np.asarray(scalars, dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(arrays)))
    for arr in arrays:
        arr = np.atleast_1d(np.asarray(arr, dtype="<f8"))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_container(path):
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("model file truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise MalformedHeaderError("not a WSUB model file")
    version, kind = struct.unpack("<HB", take(3))
    if version != VERSION:
        raise UnsupportedVersionError(f"model version {version} not supported")
    (ns,) = struct.unpack("<I", take(4))
    scalars = np.frombuffer(take(8 * ns), dtype="<f8").astype(float)
    (na,) = struct.unpack("<I", take(4))
    arrays = []
    for _ in range(na):
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(float))
    if pos != len(buf):
        raise FormatError("trailing bytes in model file")
    return kind, list(scalars), arrays


def save_subspace(model, path):
    if isinstance(model, PcaModel):
        write_container(
            path, KIND_PCA,
            [model.mean, model.components, model.eigenvalues],
            [model.total_variance, model.n_samples, float(model.rank_deficient)],
        )
    elif isinstance(model, IcaModel):
        write_container(
            path, KIND_ICA,
            [model.mean, model.whitening, model.unmixing, model.dewhitening],
            [float(model.converged), model.n_iter],
        )
    else:
        raise ValidationError("not a subspace model")


def load_subspace(path):
    kind, scalars, arrays = read_container(path)
    if kind == KIND_PCA:
        mean, comps, eig = arrays
        return PcaModel(mean, comps, eig, scalars[0], int(scalars[1]), bool(scalars[2]))
    if kind == KIND_ICA:
        mean, K, W, dw = arrays
        return IcaModel(mean, K, W, dw, bool(scalars[0]), int(scalars[1]))
    raise MalformedHeaderError(f"container kind {kind} is not a subspace model")


def transform(model, X):
    return pca_transform(model, X) if isinstance(model, PcaModel) else ica_transform(model, X)


def inverse(model, Y):
    return pca_inverse(model, Y) if isinstance(model, PcaModel) else ica_inverse(model, Y)
