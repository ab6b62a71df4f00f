"""Strided correlation and its exact adjoint on ``(..., H, W, C)`` arrays.

Images and activation maps are plain numpy arrays laid out row-major as
``(height, width, channels)``; any number of leading batch axes is allowed
and carried through every operator unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class GeometryError(ValueError):
    """Raised when array shapes do not fit a dictionary layer."""


@dataclass(frozen=True)
class StrideGeometry:
    input_h: int
    input_w: int
    stride: int
    kernel_h: int
    kernel_w: int

    @property
    def pad_h(self) -> int:
        return (self.kernel_h - self.stride) // 2

    @property
    def pad_w(self) -> int:
        return (self.kernel_w - self.stride) // 2

    @property
    def output_h(self) -> int:
        return self.input_h // self.stride

    @property
    def output_w(self) -> int:
        return self.input_w // self.stride


@dataclass
class DictionaryLayer:
    """A bank of convolution kernels ``weights[feature, kh, kw, channel]``."""

    weights: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4:
            raise GeometryError(f"weights must be 4-D (F, kh, kw, C), got shape {w.shape}")
        if not np.issubdtype(w.dtype, np.floating):
            w = w.astype(DTYPE)
        self.weights = w
        self.stride = int(self.stride)
        if self.stride < 1:
            raise GeometryError("stride must be positive")
        for k in (self.kernel_h, self.kernel_w):
            if k < self.stride:
                raise GeometryError(f"kernel size {k} smaller than stride {self.stride}")
            if (k - self.stride) % 2:
                raise GeometryError(
                    f"kernel size {k} minus stride {self.stride} must be even for symmetric padding"
                )

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[3]

    def geometry(self, input_h: int, input_w: int) -> StrideGeometry:
        return StrideGeometry(input_h, input_w, self.stride, self.kernel_h, self.kernel_w)

    def kernel_norms(self) -> np.ndarray:
        flat = self.weights.reshape(self.num_features, -1).astype(np.float64)
        return np.sqrt(np.sum(flat * flat, axis=1))

    def copy(self) -> "DictionaryLayer":
        return DictionaryLayer(self.weights.copy(), self.stride)

    @classmethod
    def random(cls, num_features, kernel, in_channels, stride, rng=None, dtype=DTYPE):
        """Unit-norm Gaussian kernels. ``kernel`` is an int or ``(kh, kw)``."""
        rng = np.random.default_rng(rng)
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        w = rng.standard_normal((num_features, kh, kw, in_channels))
        w /= np.sqrt(np.sum(w * w, axis=(1, 2, 3), keepdims=True))
        return cls(w.astype(dtype), stride)


def _result_dtype(*arrays):
    dt = np.result_type(*arrays)
    return dt if np.issubdtype(dt, np.floating) else np.dtype(DTYPE)


def _check_image(x: np.ndarray, d: DictionaryLayer) -> StrideGeometry:
    if x.ndim < 3:
        raise GeometryError(f"expected (..., H, W, C) array, got shape {x.shape}")
    h, w, c = x.shape[-3:]
    if c != d.in_channels:
        raise GeometryError(f"input has {c} channels, dictionary expects {d.in_channels}")
    if h % d.stride or w % d.stride:
        raise GeometryError(f"input size {h}x{w} not divisible by stride {d.stride}")
    return d.geometry(h, w)


def _pad_spatial(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 3) + [(ph, ph), (pw, pw), (0, 0)]
    return np.pad(x, widths)


def _windows(xp: np.ndarray, g: StrideGeometry) -> np.ndarray:
    """Strided patches of a padded array: ``(..., Ho, Wo, C, kh, kw)``."""
    win = sliding_window_view(xp, (g.kernel_h, g.kernel_w), axis=(-3, -2))
    s = g.stride
    return win[..., : g.output_h * s : s, : g.output_w * s : s, :, :, :]


def analyze(x: np.ndarray, d: DictionaryLayer) -> np.ndarray:
    """Strided zero-padded correlation of ``x`` with every kernel of ``d``.

    Returns an activation map of shape ``(..., H/stride, W/stride, F)``.
    """
    x = np.asarray(x)
    g = _check_image(x, d)
    dt = _result_dtype(x, d.weights)
    w = d.weights.astype(dt, copy=False)
    if g.kernel_h == 1 and g.kernel_w == 1 and g.stride == 1:
        return np.tensordot(x.astype(dt, copy=False), w[:, 0, 0, :], axes=([-1], [1]))
    win = _windows(_pad_spatial(x.astype(dt, copy=False), g.pad_h, g.pad_w), g)
    # win axes (..., Ho, Wo, C, kh, kw); weights reordered to (C, kh, kw, F)
    return np.tensordot(win, w.transpose(3, 1, 2, 0), axes=3)


def synthesize(a: np.ndarray, d: DictionaryLayer) -> np.ndarray:
    """Transposed convolution: the exact adjoint of :func:`analyze`."""
    a = np.asarray(a)
    if a.ndim < 3:
        raise GeometryError(f"expected (..., H, W, F) array, got shape {a.shape}")
    if a.shape[-1] != d.num_features:
        raise GeometryError(
            f"activation map has {a.shape[-1]} features, dictionary has {d.num_features}"
        )
    dt = _result_dtype(a, d.weights)
    w = d.weights.astype(dt, copy=False)
    a = a.astype(dt, copy=False)
    ho, wo = a.shape[-3:-1]
    s, kh, kw = d.stride, d.kernel_h, d.kernel_w
    g = d.geometry(ho * s, wo * s)
    lead = a.shape[:-3]
    if kh == 1 and kw == 1 and s == 1:
        return np.tensordot(a, w[:, 0, 0, :], axes=([-1], [0]))

    cols = np.tensordot(a, w, axes=([-1], [0]))  # (..., Ho, Wo, kh, kw, C)
    c = d.in_channels
    out = np.zeros(lead + (ho * s + 2 * g.pad_h, wo * s + 2 * g.pad_w, c), dtype=dt)
    if kh % s == 0 and kw % s == 0:
        # scatter one stride-sized block of every kernel at a time
        bh, bw = kh // s, kw // s
        blocks = cols.reshape(lead + (ho, wo, bh, s, bw, s, c))
        nl = len(lead)
        for bi in range(bh):
            for bj in range(bw):
                blk = blocks[..., bi, :, bj, :, :]  # (..., Ho, Wo, s, s, C)
                perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
                blk = blk.transpose(perm).reshape(lead + (ho * s, wo * s, c))
                out[..., bi * s : bi * s + ho * s, bj * s : bj * s + wo * s, :] += blk
    else:
        for di in range(kh):
            for dj in range(kw):
                out[..., di : di + ho * s : s, dj : dj + wo * s : s, :] += cols[..., di, dj, :]
    return out[..., g.pad_h : g.pad_h + ho * s, g.pad_w : g.pad_w + wo * s, :]


# -- elementwise helpers ------------------------------------------------------


def _same_shape(x, y):
    if np.shape(x) != np.shape(y):
        raise GeometryError(f"shape mismatch: {np.shape(x)} vs {np.shape(y)}")


def add(x, y):
    _same_shape(x, y)
    return np.add(x, y)


def subtract(x, y):
    _same_shape(x, y)
    return np.subtract(x, y)


def scale(x, alpha):
    return np.multiply(x, np.asarray(alpha, dtype=np.asarray(x).dtype))


def l1_norm(x, axis=None) -> float | np.ndarray:
    return np.sum(np.abs(x), axis=axis, dtype=np.float64)


def l2_norm(x, axis=None) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.sum(x * x, axis=axis))


def count_nonzero(x, axis=None) -> int | np.ndarray:
    return np.count_nonzero(x, axis=axis)


def inner(x, y) -> float:
    _same_shape(x, y)
    return float(np.sum(np.asarray(x, dtype=np.float64) * np.asarray(y, dtype=np.float64)))
