"""Continuous wavelet transform with generalized Morse wavelets and scalogram images.

Frequencies handed to :func:`morse_filter` are angular and in radians per
sample; a scale ``a`` therefore places the filter peak at
``omega_peak / a`` rad/sample, i.e. ``omega_peak * fs / (2 pi a)`` Hz.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import LengthMismatchError, MalformedHeaderError, SchemaError, ValidationError

MORSE_PEAK_VALUE = 2.0
LEVELS = 256


def morse_peak_omega(beta, gamma):
    """Angular frequency maximising ``omega**beta * exp(-omega**gamma)``."""
    return (beta / gamma) ** (1.0 / gamma)


def morse_filter(beta, gamma, scale, freq_grid):
    """Analytic generalized Morse window evaluated at ``scale * freq_grid``.

    Zero for non-positive frequencies, peak value :data:`MORSE_PEAK_VALUE`.
    """
    if not (beta > 0 and gamma > 0 and scale > 0):
        raise ValidationError("beta, gamma and scale must be positive")
    w = scale * np.asarray(freq_grid, dtype=np.float64)
    out = np.zeros_like(w)
    pos = w > 0
    wp = w[pos]
    # log form avoids overflow of omega**beta for large beta
    log_norm = (beta / gamma) * (1.0 + math.log(gamma / beta))
    out[pos] = MORSE_PEAK_VALUE * np.exp(beta * np.log(wp) - wp**gamma + log_norm)
    return out


@dataclass(frozen=True)
class WaveletParams:
    beta: float = 20.0
    gamma: float = 3.0
    scales: tuple = ()

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0):
            raise ValidationError("beta and gamma must be positive")
        s = np.asarray(self.scales, dtype=np.float64)
        object.__setattr__(self, "scales", tuple(float(v) for v in s))
        if s.size == 0:
            raise ValidationError("at least one scale is required")
        if np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise ValidationError("scales must be positive and strictly increasing")

    @classmethod
    def default(cls, sample_rate, n_scales=64, beta=20.0, gamma=3.0,
                fmin_ratio=1e-3, fmax_ratio=0.25):
        """Log-spaced scales whose peak frequencies span fs*fmin_ratio..fs*fmax_ratio."""
        freqs = np.geomspace(fmax_ratio * sample_rate, fmin_ratio * sample_rate, n_scales)
        scales = scale_for_frequency(freqs, sample_rate, beta, gamma)
        return cls(beta, gamma, tuple(scales))

    def peak_frequencies(self, sample_rate):
        return (morse_peak_omega(self.beta, self.gamma) * sample_rate
                / (2 * np.pi * np.asarray(self.scales)))


def scale_for_frequency(freq_hz, sample_rate, beta=20.0, gamma=3.0):
    return morse_peak_omega(beta, gamma) * sample_rate / (2 * np.pi * np.asarray(freq_hz))


@dataclass
class CoefficientMatrix:
    values: np.ndarray  # (n_scales, n_samples) complex
    scales: np.ndarray
    sample_rate: float
    wavelet: WaveletParams | None = None

    @property
    def shape(self):
        return self.values.shape

    def magnitude(self):
        return np.abs(self.values)

    def frequencies(self):
        if self.wavelet is None:
            raise ValidationError("wavelet parameters unknown")
        return self.wavelet.peak_frequencies(self.sample_rate)


def _samples_of(rec):
    x = getattr(rec, "samples", rec)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("cwt expects a 1-D record")
    if x.size < 16:
        raise ValidationError("record must have at least 16 samples")
    if not np.all(np.isfinite(x)):
        raise ValidationError("record contains non-finite samples")
    return x


def cwt(rec, wp, method="fft"):
    """Wavelet coefficients of ``rec`` at every scale of ``wp``.

    ``method="fft"`` multiplies the zero-padded spectrum by the scaled Morse
    filter and inverse transforms.  ``method="direct"`` evaluates the plain
    correlation ``sum_t x(t) psi((t - b) / a)`` with the time-domain wavelet,
    without the 1/a factor and without conjugation; it equals
    ``a * conj(fft result)`` up to discretisation error and costs O(N^2) per
    scale, so it is meant for short checks only.
    """
    x = _samples_of(rec)
    fs = float(getattr(rec, "sample_rate", 1.0))
    scales = np.asarray(wp.scales, dtype=np.float64)
    if method == "fft":
        values = _cwt_fft(x, scales, wp.beta, wp.gamma)
    elif method == "direct":
        values = _cwt_direct(x, scales, wp.beta, wp.gamma)
    else:
        raise ValidationError(f"unknown cwt method {method!r}")
    return CoefficientMatrix(values, scales.copy(), fs, wp)


def _cwt_fft(x, scales, beta, gamma):
    n = x.size
    npad = scipy.fft.next_fast_len(2 * n)
    spec = scipy.fft.fft(x, npad)
    k = np.arange(npad)
    omega = 2 * np.pi * k / npad
    omega[k >= npad // 2] = 0.0  # analytic: drop Nyquist and negative bins
    filt = np.stack([morse_filter(beta, gamma, a, omega) for a in scales])
    return scipy.fft.ifft(spec[None, :] * filt, axis=1)[:, :n]


def morse_wavelet_time(beta, gamma, u, n_quad=None):
    """Time-domain Morse wavelet ``psi(u) = (1/2pi) int psi_hat(w) e^{iwu} dw``."""
    u = np.asarray(u, dtype=np.float64)
    w_hi = morse_peak_omega(beta, gamma)
    while morse_filter(beta, gamma, 1.0, [w_hi])[0] > 1e-18:
        w_hi *= 1.25
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    if n_quad is None:
        n_quad = int(max(2048, 40 * w_hi * umax / (2 * np.pi)))
    w = np.linspace(0.0, w_hi, n_quad)
    filt = morse_filter(beta, gamma, 1.0, w)
    weights = np.full(n_quad, w[1] - w[0])
    weights[[0, -1]] *= 0.5
    out = np.empty(u.shape, dtype=np.complex128)
    flat_u = u.ravel()
    flat_out = out.ravel()
    step = max(1, 2_000_000 // n_quad)
    for i in range(0, flat_u.size, step):
        phase = np.exp(1j * np.outer(flat_u[i:i + step], w))
        flat_out[i:i + step] = phase @ (filt * weights) / (2 * np.pi)
    return out


def _cwt_direct(x, scales, beta, gamma):
    n = x.size
    lags = np.arange(-(n - 1), n)
    out = np.empty((scales.size, n), dtype=np.complex128)
    t = np.arange(n)
    for i, a in enumerate(scales):
        psi = morse_wavelet_time(beta, gamma, lags / a)
        # psi((t - b)/a) indexed by lag t - b
        mat = psi[(t[None, :] - t[:, None]) + (n - 1)]  # rows b, cols t
        out[i] = mat @ x
    return out


# ---------------------------------------------------------------------------
# images


def _jet_lut():
    x = np.arange(LEVELS) / (LEVELS - 1)
    chans = [np.clip(1.5 - np.abs(4 * x - c), 0.0, 1.0) for c in (3.0, 2.0, 1.0)]
    return np.round(np.stack(chans, axis=1) * 255).astype(np.uint8)


# 256x3 uint8 jet-style lookup used for channels=3
COLORMAP = _jet_lut()


@dataclass
class ImageTensor:
    pixels: np.ndarray  # (h, w, c), values in [0, 1]
    label: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValidationError("pixels must have shape (h, w, 1|3)")
        if p.size and (p.min() < 0 or p.max() > 1):
            raise ValidationError("pixels must lie in [0, 1]")
        self.pixels = p

    @property
    def shape(self):
        return self.pixels.shape

    def levels(self):
        return np.round(self.pixels * (LEVELS - 1)).astype(np.uint8)


def resample_matrix(n_in, n_out):
    """(n_out, n_in) bilinear (triangle) resampling weights.

    When shrinking, the triangle support is widened by the reduction factor so
    every input cell contributes, as in antialiased bilinear resizers.
    """
    if n_in < 1 or n_out < 1:
        raise ValidationError("sizes must be positive")
    ratio = n_in / n_out
    support = max(ratio, 1.0)
    centres = (np.arange(n_out) + 0.5) * ratio - 0.5
    dist = np.abs(np.arange(n_in)[None, :] - centres[:, None]) / support
    w = np.clip(1.0 - dist, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def to_image(cm, height=64, width=64, channels=1):
    """Scalogram image: magnitude, resample, min-max normalise, quantise.

    Row 0 holds the smallest scale (highest frequency).  A constant
    magnitude field has no contrast and yields an all-zero image.
    """
    if channels not in (1, 3):
        raise ValidationError("channels must be 1 or 3")
    mag = np.abs(cm.values) if isinstance(cm, CoefficientMatrix) else np.abs(np.asarray(cm))
    if mag.ndim != 2:
        raise ValidationError("coefficient matrix must be 2-D")
    rh = resample_matrix(mag.shape[0], height)
    rw = resample_matrix(mag.shape[1], width)
    img = rh @ mag @ rw.T
    lo, hi = img.min(), img.max()
    if not hi > lo:
        levels = np.zeros((height, width), dtype=np.uint8)
    else:
        levels = np.round((img - lo) / (hi - lo) * (LEVELS - 1)).astype(np.uint8)
    if channels == 1:
        return ImageTensor(levels[:, :, None] / (LEVELS - 1))
    return ImageTensor(COLORMAP[levels] / (LEVELS - 1))


def flatten(img):
    p = img.pixels if isinstance(img, ImageTensor) else np.asarray(img)
    return p.reshape(-1)


def unflatten(vec, shape):
    return ImageTensor(np.asarray(vec, dtype=np.float64).reshape(shape))


def scalogram(rec, wp=None, height=64, width=64, channels=1):
    if wp is None:
        wp = WaveletParams.default(rec.sample_rate)
    img = to_image(cwt(rec, wp), height, width, channels)
    img.label = int(rec.label)
    return img


def encode_records(records, wp=None, height=64, width=64, channels=1):
    """Stack of scalograms, shape (n, height, width, channels), plus labels."""
    images = np.empty((len(records), height, width, channels))
    labels = np.empty(len(records), dtype=np.uint8)
    for i, rec in enumerate(records):
        img = scalogram(rec, wp, height, width, channels)
        images[i] = img.pixels
        labels[i] = img.label
    return images, labels


# ---------------------------------------------------------------------------
# image corpus file: u32 count, u16 h, u16 w, u8 c, then per image u8 label
# followed by h*w*c quantised levels.

_CORPUS_HEADER = struct.Struct("<IHHB")


def save_images(path, images, labels):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValidationError("images must be (n, h, w, c)")
    n, h, w, c = images.shape
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    if labels.size != n:
        raise ValidationError("one label per image required")
    levels = np.round(images * (LEVELS - 1)).astype(np.uint8).reshape(n, -1)
    body = np.concatenate([labels[:, None], levels], axis=1)
    Path(path).write_bytes(_CORPUS_HEADER.pack(n, h, w, c) + body.tobytes())


def load_images(path):
    buf = Path(path).read_bytes()
    if len(buf) < _CORPUS_HEADER.size:
        raise MalformedHeaderError("image corpus header truncated")
    n, h, w, c = _CORPUS_HEADER.unpack_from(buf)
    if c not in (1, 3) or h == 0 or w == 0:
        raise MalformedHeaderError(f"bad image geometry {h}x{w}x{c}")
    stride = 1 + h * w * c
    body = buf[_CORPUS_HEADER.size:]
    if len(body) != n * stride:
        raise LengthMismatchError(f"expected {n * stride} payload bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(n, stride)
    labels = arr[:, 0].copy()
    if np.any(labels > 2):
        raise SchemaError("label code outside {0,1,2}")
    images = arr[:, 1:].reshape(n, h, w, c) / (LEVELS - 1)
    return images, labels
