"""NumPy layers with explicit backward passes.

Tensors are channels-last: images are (N, H, W, C), dense activations (N, F).
Every layer caches what its backward pass needs during ``forward`` and
stores parameter gradients in ``self.grads`` (same keys as ``self.params``).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from ..errors import ValidationError


# ---------------------------------------------------------------------------
# activations


def _act_forward(name, slope, z):
    if name == "linear":
        return z
    if name == "leaky_relu":
        return np.maximum(z, slope * z) if slope <= 1 else np.where(z > 0, z, slope * z)
    if name == "sigmoid":
        return expit(z)
    raise ValidationError(f"unknown activation {name!r}")


def _act_backward(name, slope, z, a, da):
    if name == "linear":
        return da
    if name == "leaky_relu":
        scale = np.where(z > 0, 1.0, slope)
        return da * scale
    if name == "sigmoid":
        return da * a * (1.0 - a)
    raise ValidationError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# patch extraction


def _patches(xp, k, s, ho, wo):
    """View of shape (N, ho, wo, k, k, C) over a padded input."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    return as_strided(xp, (n, ho, wo, k, k, c), (sn, sh * s, sw * s, sh, sw, sc), writeable=False)


def _scatter_patches(cols, k, s, out_shape):
    """Adjoint of ``_patches``: add (N, ho, wo, k, k, C) patches into a buffer."""
    buf = np.zeros(out_shape)
    _, ho, wo = cols.shape[:3]
    for i in range(k):
        for j in range(k):
            buf[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += cols[:, :, :, i, j, :]
    return buf


def conv_out_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv_transpose_out_size(n, k, s, p, op):
    return (n - 1) * s - 2 * p + k + op


class Layer:
    kind = "layer"
    trainable = ()
    buffers = ()

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, in_shape):
        return in_shape

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}


class Activated(Layer):
    def __init__(self, activation="linear", slope=0.2):
        super().__init__()
        self.activation = activation
        self.slope = slope

    def _activate(self, z):
        self._z = z
        self._a = _act_forward(self.activation, self.slope, z)
        return self._a

    def _deactivate(self, da):
        dz = _act_backward(self.activation, self.slope, self._z, self._a, da)
        self._z = self._a = None
        return dz


class Conv2D(Activated):
    kind = "conv2d"
    trainable = ("W", "b")

    def __init__(self, in_ch, filters, kernel=3, stride=2, padding=1, activation="leaky_relu", slope=0.2):
        super().__init__(activation, slope)
        self.in_ch, self.filters = in_ch, filters
        self.k, self.s, self.p = kernel, stride, padding
        self.params = {"W": np.zeros((kernel, kernel, in_ch, filters)), "b": np.zeros(filters)}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ValidationError(f"conv2d expects (H, W, {self.in_ch}) input, got {in_shape}")
        h, w, _ = in_shape
        ho, wo = conv_out_size(h, self.k, self.s, self.p), conv_out_size(w, self.k, self.s, self.p)
        if ho < 1 or wo < 1:
            raise ValidationError(f"conv2d output would be empty for input {in_shape}")
        return (ho, wo, self.filters)

    def forward(self, x, train):
        n, h, w, _ = x.shape
        ho, wo, _ = self.output_shape(x.shape[1:])
        p = self.p
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = _patches(xp, self.k, self.s, ho, wo).reshape(n * ho * wo, -1)
        z = cols @ self.params["W"].reshape(-1, self.filters) + self.params["b"]
        self._cache = (cols, xp.shape, (n, ho, wo))
        return self._activate(z.reshape(n, ho, wo, self.filters))

    def backward(self, dy):
        cols, xp_shape, (n, ho, wo) = self._cache
        self._cache = None
        dz = self._deactivate(dy).reshape(-1, self.filters)
        wmat = self.params["W"].reshape(-1, self.filters)
        self.grads["W"] = (cols.T @ dz).reshape(self.params["W"].shape)
        self.grads["b"] = dz.sum(axis=0)
        dcols = (dz @ wmat.T).reshape(n, ho, wo, self.k, self.k, self.in_ch)
        dxp = _scatter_patches(dcols, self.k, self.s, xp_shape)
        p = self.p
        return dxp[:, p:xp_shape[1] - p, p:xp_shape[2] - p, :] if p else dxp

    def describe(self):
        return {"kind": self.kind, "in": self.in_ch, "filters": self.filters, "kernel": self.k,
                "stride": self.s, "padding": self.p, "activation": self.activation, "slope": self.slope}


class Conv2DTranspose(Activated):
    """Adjoint of a strided convolution; weights are (k, k, filters, in_ch)."""

    kind = "conv2d_transpose"
    trainable = ("W", "b")

    def __init__(self, in_ch, filters, kernel=3, stride=2, padding=1, output_padding=1,
                 activation="leaky_relu", slope=0.2):
        super().__init__(activation, slope)
        self.in_ch, self.filters = in_ch, filters
        self.k, self.s, self.p, self.op = kernel, stride, padding, output_padding
        self.params = {"W": np.zeros((kernel, kernel, filters, in_ch)), "b": np.zeros(filters)}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ValidationError(
                f"conv2d_transpose expects (H, W, {self.in_ch}) input, got {in_shape}")
        h, w, _ = in_shape
        ho = conv_transpose_out_size(h, self.k, self.s, self.p, self.op)
        wo = conv_transpose_out_size(w, self.k, self.s, self.p, self.op)
        if ho < 1 or wo < 1:
            raise ValidationError(f"conv2d_transpose output would be empty for input {in_shape}")
        return (ho, wo, self.filters)

    def forward(self, x, train):
        n, h, w, _ = x.shape
        ho, wo, _ = self.output_shape(x.shape[1:])
        p = self.p
        wmat = self.params["W"].reshape(-1, self.in_ch)  # (k*k*F, Cin)
        x2 = x.reshape(-1, self.in_ch)
        cols = (x2 @ wmat.T).reshape(n, h, w, self.k, self.k, self.filters)
        buf = _scatter_patches(cols, self.k, self.s, (n, ho + 2 * p, wo + 2 * p, self.filters))
        z = buf[:, p:p + ho, p:p + wo, :] + self.params["b"]
        self._cache = (x2, (n, h, w), (ho, wo))
        return self._activate(z)

    def backward(self, dy):
        x2, (n, h, w), (ho, wo) = self._cache
        self._cache = None
        dz = self._deactivate(dy)
        p = self.p
        self.grads["b"] = dz.sum(axis=(0, 1, 2))
        dbuf = np.pad(dz, ((0, 0), (p, p), (p, p), (0, 0)))
        dcols = _patches(dbuf, self.k, self.s, h, w).reshape(n * h * w, -1)
        wmat = self.params["W"].reshape(-1, self.in_ch)
        self.grads["W"] = (dcols.T @ x2).reshape(self.params["W"].shape)
        return (dcols @ wmat).reshape(n, h, w, self.in_ch)

    def describe(self):
        return {"kind": self.kind, "in": self.in_ch, "filters": self.filters, "kernel": self.k,
                "stride": self.s, "padding": self.p, "output_padding": self.op,
                "activation": self.activation, "slope": self.slope}


class Dense(Activated):
    kind = "dense"
    trainable = ("W", "b")

    def __init__(self, in_features, units, activation="linear", slope=0.2):
        super().__init__(activation, slope)
        self.in_features, self.units = in_features, units
        self.params = {"W": np.zeros((in_features, units)), "b": np.zeros(units)}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ValidationError(f"dense expects ({self.in_features},) input, got {in_shape}")
        return (self.units,)

    def forward(self, x, train):
        self._x = x
        return self._activate(x @ self.params["W"] + self.params["b"])

    def backward(self, dy):
        dz = self._deactivate(dy)
        self.grads["W"] = self._x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        self._x = None
        return dz @ self.params["W"].T

    def describe(self):
        return {"kind": self.kind, "in": self.in_features, "units": self.units,
                "activation": self.activation, "slope": self.slope}


class BatchNorm(Layer):
    """Per-channel batch normalisation over every axis but the last."""

    kind = "batch_norm"
    trainable = ("gamma", "beta")
    buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.99, eps=1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def output_shape(self, in_shape):
        if in_shape[-1] != self.channels:
            raise ValidationError(f"batch_norm expects {self.channels} channels, got {in_shape}")
        return in_shape

    def n_params(self):
        return 4 * self.channels

    def forward(self, x, train):
        axes = tuple(range(x.ndim - 1))
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if train:
            self._cache = (xhat, inv, axes)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dy):
        xhat, inv, axes = self._cache
        self._cache = None
        m = dy.size // self.channels
        self.grads["beta"] = dy.sum(axis=axes)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        dxhat = dy * self.params["gamma"]
        return (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))

    def describe(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum, "eps": self.eps}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(v) for v in shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ValidationError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def describe(self):
        return {"kind": self.kind, "shape": list(self.shape)}


class Activation(Activated):
    kind = "activation"

    def forward(self, x, train):
        return self._activate(x)

    def backward(self, dy):
        return self._deactivate(dy)

    def describe(self):
        return {"kind": self.kind, "activation": self.activation, "slope": self.slope}


def layer_from_description(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "conv2d":
        return Conv2D(d["in"], d["filters"], d["kernel"], d["stride"], d["padding"],
                      d["activation"], d["slope"])
    if kind == "conv2d_transpose":
        return Conv2DTranspose(d["in"], d["filters"], d["kernel"], d["stride"], d["padding"],
                               d["output_padding"], d["activation"], d["slope"])
    if kind == "dense":
        return Dense(d["in"], d["units"], d["activation"], d["slope"])
    if kind == "batch_norm":
        return BatchNorm(d["channels"], d["momentum"], d["eps"])
    if kind == "flatten":
        return Flatten()
    if kind == "reshape":
        return Reshape(d["shape"])
    if kind == "activation":
        return Activation(d["activation"], d["slope"])
    raise ValidationError(f"unknown layer kind {kind!r}")
