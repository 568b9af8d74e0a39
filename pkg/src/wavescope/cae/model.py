"""Convolutional autoencoder: construction, training and checkpoints."""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (
    MalformedHeaderError,
    TrainingError,
    UnsupportedVersionError,
    ValidationError,
)
from . import layers as L

LRELU_SLOPE = 0.2
BN_MOMENTUM = 0.99
BN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0  # filters for convolutions
    kernel: int = 3
    stride: int = 2
    activation: str = "linear"
    slope: float = LRELU_SLOPE
    padding: int = 1
    output_padding: int = 1
    shape: tuple = ()

    def __post_init__(self):
        if self.kind not in ("conv2d", "conv2d_transpose", "batch_norm", "dense",
                             "flatten", "reshape", "activation"):
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kernel <= 0 or self.stride <= 0:
            raise ValidationError("kernel and stride must be positive")
        if self.kind in ("conv2d", "conv2d_transpose", "dense") and self.units <= 0:
            raise ValidationError(f"{self.kind} needs a positive filter/unit count")
        if self.activation not in ("linear", "leaky_relu", "sigmoid"):
            raise ValidationError(f"unknown activation {self.activation!r}")


def conv(filters, activation="leaky_relu"):
    return LayerSpec("conv2d", filters, activation=activation)


def deconv(filters, activation="leaky_relu"):
    return LayerSpec("conv2d_transpose", filters, activation=activation)


def dense(units, activation="linear"):
    return LayerSpec("dense", units, activation=activation)


BN = LayerSpec("batch_norm")
FLATTEN = LayerSpec("flatten")


def reshape(*shape):
    return LayerSpec("reshape", shape=tuple(shape))


@dataclass(frozen=True)
class CaeSpec:
    input_shape: tuple
    encoder: tuple  # through the code layer
    decoder: tuple


def _mirror_spec(input_shape, filters, hidden=50, code=3):
    h, w, c = input_shape
    enc = []
    for f in filters:
        enc += [conv(f), BN]
    enc += [FLATTEN, dense(hidden, "leaky_relu"), dense(code)]
    depth = len(filters)
    bh, bw = h >> depth, w >> depth
    dec = [dense(bh * bw * filters[-1], "leaky_relu"), reshape(bh, bw, filters[-1])]
    for f in reversed(filters[:-1]):
        dec += [deconv(f), BN]
    dec.append(deconv(c, "sigmoid"))
    return CaeSpec(tuple(input_shape), tuple(enc), tuple(dec))


def paper_preset():
    """256x256x3 input, filters 16-32-64-128-256, Dense(50), 3-wide code."""
    return _mirror_spec((256, 256, 3), (16, 32, 64, 128, 256))


def desk_preset(size=64, channels=1, filters=(8, 16, 32)):
    return _mirror_spec((size, size, channels), tuple(filters))


PRESETS = {"paper-shape": paper_preset, "desk": desk_preset}


class CaeModel:
    def __init__(self, input_shape, layers, code_index, specs=None):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.code_index = code_index  # layers[:code_index] produce the code
        self.training = False
        self.specs = specs

    @property
    def encoder_layers(self):
        return self.layers[:self.code_index]

    @property
    def decoder_layers(self):
        return self.layers[self.code_index:]

    def parameters(self):
        """Trainable tensors as (layer, key) pairs in a fixed order."""
        return [(layer, k) for layer in self.layers for k in layer.trainable]

    def shapes(self):
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer.output_shape(out[-1]))
        return out

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValidationError(f"batch shape {x.shape[1:]} != model input {self.input_shape}")
        code = None
        for i, layer in enumerate(self.layers):
            if i == self.code_index:
                code = x
            x = layer.forward(x, train)
        if code is None:
            code = x
        return x, code

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def _init_layer(layer, rng):
    if not isinstance(layer, (L.Conv2D, L.Conv2DTranspose, L.Dense)):
        return
    W = layer.params["W"]
    if isinstance(layer, L.Dense):
        fan_in = layer.in_features
    elif isinstance(layer, L.Conv2D):
        fan_in = layer.k * layer.k * layer.in_ch
    else:
        fan_in = max(1.0, layer.k * layer.k * layer.in_ch / layer.s**2)
    if layer.activation == "leaky_relu":
        std = np.sqrt(2.0 / ((1 + layer.slope**2) * fan_in))
    else:
        std = np.sqrt(1.0 / fan_in)
    layer.params["W"] = rng.standard_normal(W.shape) * std
    layer.params["b"] = np.zeros_like(layer.params["b"])


def _make_layer(spec, in_shape):
    k = spec.kind
    if k == "conv2d":
        return L.Conv2D(in_shape[-1], spec.units, spec.kernel, spec.stride, spec.padding,
                        spec.activation, spec.slope)
    if k == "conv2d_transpose":
        return L.Conv2DTranspose(in_shape[-1], spec.units, spec.kernel, spec.stride,
                                 spec.padding, spec.output_padding, spec.activation, spec.slope)
    if k == "dense":
        if len(in_shape) != 1:
            raise ValidationError(f"dense needs flat input, got {in_shape}")
        return L.Dense(in_shape[0], spec.units, spec.activation, spec.slope)
    if k == "batch_norm":
        return L.BatchNorm(in_shape[-1], BN_MOMENTUM, BN_EPS)
    if k == "flatten":
        return L.Flatten()
    if k == "reshape":
        return L.Reshape(spec.shape)
    return L.Activation(spec.activation, spec.slope)


def build_cae(spec, input_shape=None, seed=0):
    """Instantiate layers for ``spec`` and check the shape chain end to end."""
    if not isinstance(spec, CaeSpec):
        enc, dec = spec
        spec = CaeSpec(tuple(input_shape), tuple(enc), tuple(dec))
    elif input_shape is not None and tuple(input_shape) != spec.input_shape:
        spec = CaeSpec(tuple(input_shape), spec.encoder, spec.decoder)
    shape = spec.input_shape
    built = []
    for idx, ls in enumerate(spec.encoder + spec.decoder):
        try:
            layer = _make_layer(ls, shape)
            shape = layer.output_shape(shape)
        except ValidationError as exc:
            raise ValidationError(f"layer {idx} ({ls.kind}): {exc}") from None
        built.append(layer)
    if shape != spec.input_shape:
        raise ValidationError(
            f"layer {len(built) - 1} ({built[-1].kind}): output shape {shape} does not "
            f"match input shape {spec.input_shape}")
    rng = np.random.default_rng(seed)
    for layer in built:
        _init_layer(layer, rng)
    return CaeModel(spec.input_shape, built, len(spec.encoder), spec)


def count_params(model):
    enc = sum(layer.n_params() for layer in model.encoder_layers)
    dec = sum(layer.n_params() for layer in model.decoder_layers)
    return enc, dec, enc + dec


def layer_table(model):
    """(kind, output shape, parameter count) per layer."""
    rows, shape = [], model.input_shape
    for layer in model.layers:
        shape = layer.output_shape(shape)
        rows.append((layer.kind, shape, layer.n_params()))
    return rows


def forward(model, batch, mode="infer"):
    if mode not in ("train", "infer"):
        raise ValidationError("mode must be 'train' or 'infer'")
    return model.forward(batch, train=(mode == "train"))


# ---------------------------------------------------------------------------
# metrics


def mse_loss(recon, target):
    """Mean of squared elementwise errors (no 1/2 factor)."""
    d = np.asarray(recon, float) - np.asarray(target, float)
    return float(np.mean(d * d))


def mae(recon, target):
    return float(np.mean(np.abs(np.asarray(recon, float) - np.asarray(target, float))))


def r2(recon, target):
    target = np.asarray(target, float)
    sse = float(np.sum((np.asarray(recon, float) - target) ** 2))
    sst = float(np.sum((target - target.mean()) ** 2))
    if sst == 0:
        return 1.0 if sse == 0 else 0.0
    return 1.0 - sse / sst


def per_sample_mse(recon, target):
    d = np.asarray(recon, float) - np.asarray(target, float)
    return np.mean(d.reshape(d.shape[0], -1) ** 2, axis=1)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, model):
        if not self.m:
            self.m = [np.zeros_like(layer.params[k]) for layer, k in model.parameters()]
            self.v = [np.zeros_like(layer.params[k]) for layer, k in model.parameters()]


def adam_step(model, opt):
    opt.ensure(model)
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1 - b1**opt.step
    c2 = 1 - b2**opt.step
    for (layer, k), m, v in zip(model.parameters(), opt.m, opt.v):
        g = layer.grads[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        layer.params[k] = layer.params[k] - opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def loss_and_grads(model, batch):
    """Train-mode forward, MSE loss and backward pass (grads left on layers)."""
    batch = np.asarray(batch, dtype=np.float64)
    recon, _ = model.forward(batch, train=True)
    loss = mse_loss(recon, batch)
    if not np.isfinite(loss):
        raise TrainingError("non-finite reconstruction loss")
    model.backward(2.0 * (recon - batch) / recon.size)
    return loss, recon


def backward_and_step(model, batch, opt):
    if not model.training:
        raise ValidationError("model must be in train mode")
    loss, _ = loss_and_grads(model, batch)
    adam_step(model, opt)
    return loss


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    mae: list = field(default_factory=list)
    r2: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


def init_output_bias(model, images):
    """Set a sigmoid output layer's bias to the logit of the mean intensity.

    Sparse scalograms are mostly near zero; starting the output at 0.5 costs
    thousands of Adam steps before the background is reproduced.
    """
    last = model.layers[-1]
    if getattr(last, "activation", None) != "sigmoid" or "b" not in last.params:
        return
    mean = np.asarray(images, dtype=np.float64).reshape(-1, last.params["b"].size).mean(axis=0)
    mean = np.clip(mean, 1e-3, 1 - 1e-3)
    last.params["b"] = np.log(mean / (1 - mean))


def train(model, images, epochs, lr=1e-3, batch_size=32, seed=0, opt=None, log_every=0):
    """Mini-batch Adam on baseline images; the model is left in infer mode.

    A fresh optimizer (step 0) also triggers :func:`init_output_bias`.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise ValidationError("training set is empty")
    if batch_size <= 0:
        raise ValidationError("batch_size must be positive")
    opt = opt or OptimizerState(learning_rate=lr)
    if opt.step == 0 and epochs > 0:
        init_output_bias(model, images)
    hist = TrainHistory()
    rng = np.random.default_rng(seed)
    n = images.shape[0]
    model.training = True
    t0 = time.perf_counter()
    try:
        for epoch in range(epochs):
            order = rng.permutation(n)
            sse = sae = 0.0
            preds = []
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                batch = images[idx]
                try:
                    loss, recon = loss_and_grads(model, batch)
                except TrainingError as exc:
                    raise TrainingError(f"epoch {epoch}: {exc}") from None
                adam_step(model, opt)
                sse += loss * batch.size
                sae += float(np.abs(recon - batch).sum())
                preds.append((idx, recon))
            recon_all = np.empty_like(images)
            for idx, r in preds:
                recon_all[idx] = r
            hist.loss.append(sse / images.size)
            hist.mae.append(sae / images.size)
            hist.r2.append(r2(recon_all, images))
            hist.wall_time.append(time.perf_counter() - t0)
            if log_every and (epoch + 1) % log_every == 0:
                print(f"epoch {epoch + 1}/{epochs} loss {hist.loss[-1]:.3e}", flush=True)
    finally:
        model.training = False
    return hist


def reconstruct(model, images, batch_size=256):
    images = np.asarray(images, dtype=np.float64)
    outs, codes = [], []
    for start in range(0, images.shape[0], batch_size):
        r, c = model.forward(images[start:start + batch_size], train=False)
        outs.append(r)
        codes.append(c)
    if not outs:
        return np.empty((0,) + model.input_shape), np.empty((0, 0))
    return np.concatenate(outs), np.concatenate(codes)


def reconstruction_errors(model, images):
    recon, _ = reconstruct(model, images)
    return per_sample_mse(recon, images)


def latent_codes(model, images):
    _, codes = reconstruct(model, images)
    return codes.reshape(codes.shape[0], -1)


# ---------------------------------------------------------------------------
# checkpoint: b"WCAE", u16 version, u32 header length, JSON layer table,
# then f64 tensors (params, running stats) in table order, then u8 flag and
# optional Adam state.

MAGIC = b"WCAE"
VERSION = 1


def _tensors(model):
    out = []
    for layer in model.layers:
        for k in sorted(layer.params):
            out.append(layer.params[k])
        for k in layer.buffers:
            out.append(getattr(layer, k))
    return out


def save_checkpoint(model, path, opt=None):
    header = json.dumps({
        "input_shape": list(model.input_shape),
        "code_index": model.code_index,
        "layers": [layer.describe() for layer in model.layers],
    }, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in _tensors(model)]
    if opt is None or not opt.m:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(struct.pack("<Q4d", opt.step, opt.learning_rate, opt.beta1, opt.beta2, opt.eps))
        parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in opt.m + opt.v]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(model, opt_or_None)``."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise MalformedHeaderError("checkpoint truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise MalformedHeaderError("not a WCAE checkpoint")
    version, hlen = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} not supported")
    header = json.loads(take(hlen))
    built = [L.layer_from_description(d) for d in header["layers"]]
    model = CaeModel(tuple(header["input_shape"]), built, header["code_index"])
    model.shapes()

    def read_like(arr):
        return np.frombuffer(take(8 * arr.size), dtype="<f8").reshape(arr.shape).astype(float)

    for layer in model.layers:
        for k in sorted(layer.params):
            layer.params[k] = read_like(layer.params[k])
        for k in layer.buffers:
            setattr(layer, k, read_like(getattr(layer, k)))
    opt = None
    if take(1) == b"\x01":
        step, lr, b1, b2, eps = struct.unpack("<Q4d", take(40))
        opt = OptimizerState(lr, b1, b2, eps, step)
        opt.m = [read_like(layer.params[k]) for layer, k in model.parameters()]
        opt.v = [read_like(layer.params[k]) for layer, k in model.parameters()]
    if pos != len(buf):
        raise MalformedHeaderError("trailing bytes in checkpoint")
    return model, opt
