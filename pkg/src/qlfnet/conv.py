"""Discrete convolution, convolutional layers, residual blocks, pooling and ReLU.

Convolution follows the index convention

    out[r, s] = sum_{u=-h1..h1} sum_{v=-h2..h2} K[u, v] * I[r + u, s + v]

with ``K[u, v]`` stored at ``weights[u + h1, v + h2]`` and pixels outside the
plane read as zero, so the output keeps the input's height and width.

Layers work on batches shaped (N, C, H, W). Each layer caches what its
backward pass needs during ``forward``; ``backward`` returns the gradient with
respect to the layer input and stores parameter gradients in ``self.grads``
(same order as ``self.params``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError


@dataclass
class Filter:
    """A (2*h1+1) x (2*h2+1) convolution kernel."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"filter sides must be odd, got {self.weights.shape}")

    @property
    def half_height(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def half_width(self) -> int:
        return self.weights.shape[1] // 2


def _kernel_array(filt) -> np.ndarray:
    w = filt.weights if isinstance(filt, Filter) else np.asarray(filt, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise ShapeError(f"filter must be a 2-D array with odd sides, got {w.shape}")
    return w


def _as_plane(plane) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 3 and plane.shape[0] == 1:
        plane = plane[0]
    if plane.ndim != 2 or min(plane.shape) < 1:
        raise ShapeError(f"expected a single plane, got shape {plane.shape}")
    return plane


# --------------------------------------------------------------------------
# batched primitives

def _padded_flat(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W) -> (C, N*Hp*Wp + tail): zero-padded planes laid end to end.

    On this layout the tap (u, v) of every output pixel sits at the flat
    offset u*Wp + v from the pixel's own position, so each patch row is a
    single contiguous slice.
    """
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    m = n * hp * wp
    flat = np.zeros((c, m + (kh - 1) * wp + kw - 1), dtype=x.dtype)
    flat[:, :m].reshape(c, n, hp, wp)[:, :, ph:ph + h, pw:pw + w] = x.transpose(1, 0, 2, 3)
    return flat


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W) -> (C*kh*kw, N*Hp*Wp) patch matrix on the padded grid.

    Column p holds the patch whose top-left tap is padded position p; only
    positions with row < H and col < W are real output pixels (see ``_crop``).
    """
    n, c, h, w = x.shape
    wp = w + 2 * (kw // 2)
    m = n * (h + 2 * (kh // 2)) * wp
    flat = _padded_flat(x, kh, kw)
    cols = np.empty((c, kh, kw, m), dtype=flat.dtype)
    for u in range(kh):
        for v in range(kw):
            off = u * wp + v
            cols[:, u, v] = flat[:, off:off + m]
    return cols.reshape(c * kh * kw, m)


def _crop(full: np.ndarray, shape, kh: int, kw: int) -> np.ndarray:
    """(K, N*Hp*Wp) values on the padded grid -> (K, N, H, W) real pixels."""
    n, _, h, w = shape
    k = full.shape[0]
    return full.reshape(k, n, h + 2 * (kh // 2), w + 2 * (kw // 2))[:, :, :h, :w]


def _uncrop(d: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(K, N, H, W) -> (K, N*Hp*Wp), zero outside the real pixels."""
    k, n, h, w = d.shape
    full = np.zeros((k, n, h + 2 * (kh // 2), w + 2 * (kw // 2)), dtype=d.dtype)
    full[:, :, :h, :w] = d
    return full.reshape(k, -1)


def _col2im(dcols: np.ndarray, shape, kh: int, kw: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add patch gradients back to pixels."""
    n, c, h, w = shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    m = n * hp * wp
    d = dcols.reshape(c, kh, kw, m)
    flat = np.zeros((c, m + (kh - 1) * wp + kw - 1), dtype=dcols.dtype)
    for u in range(kh):
        for v in range(kw):
            off = u * wp + v
            flat[:, off:off + m] += d[:, u, v]
    dx = flat[:, :m].reshape(c, n, hp, wp)[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(dx.transpose(1, 0, 2, 3))


def conv_batch(x: np.ndarray, weights: np.ndarray, bias=None):
    """Forward of a filter bank over a batch; returns (output, patch matrix)."""
    n, c, h, w = x.shape
    cout, cin, kh, kw = weights.shape
    if c != cin:
        raise ShapeError(f"input has {c} maps, layer expects {cin}")
    cols = _im2col(x, kh, kw)
    y = _crop(weights.reshape(cout, -1) @ cols, x.shape, kh, kw).transpose(1, 0, 2, 3)
    y = y + bias if bias is not None else np.ascontiguousarray(y)
    return y, cols


def conv_batch_backward(dy: np.ndarray, cols: np.ndarray, weights: np.ndarray, x_shape):
    """Gradients (dx, dweights, dbias-plane) for ``conv_batch``."""
    cout = weights.shape[0]
    kh, kw = weights.shape[2:]
    dyr = _uncrop(dy.transpose(1, 0, 2, 3), kh, kw)
    dw = (dyr @ cols.T).reshape(weights.shape)
    db = dy.sum(axis=0)
    dx = _col2im(weights.reshape(cout, -1).T @ dyr, x_shape, kh, kw)
    return dx, dw, db


# --------------------------------------------------------------------------
# single-image operations

def convolve2d(plane, filt) -> np.ndarray:
    """Zero-padded 'same' convolution of one plane with one filter."""
    plane = _as_plane(plane)
    w = _kernel_array(filt)
    y, _ = conv_batch(plane[None, None], w[None, None])
    return y[0, 0]


def convolve2d_backward(plane, filt, upstream):
    """Return (d_plane, d_filter) given d_out for ``convolve2d``."""
    plane = _as_plane(plane)
    w = _kernel_array(filt)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != plane.shape:
        raise ShapeError(f"upstream gradient shape {upstream.shape} != plane shape {plane.shape}")
    cols = _im2col(plane[None, None], *w.shape)
    dx, dw, _ = conv_batch_backward(upstream[None, None], cols, w[None, None], (1, 1) + plane.shape)
    return dx[0, 0], dw[0, 0]


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def max_pool2d(x) -> np.ndarray:
    """2x2 max pooling with stride 2 over the last two axes."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even height and width, got {h}x{w}")
    lead = x.shape[:-2]
    return x.reshape(*lead, h // 2, 2, w // 2, 2).max(axis=(-3, -1))


# --------------------------------------------------------------------------
# layers

class Layer:
    params: list
    grads: list

    def _require_cache(self, attr):
        value = getattr(self, attr, None)
        if value is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return value


class ConvLayer(Layer):
    """Filter bank ``weights[i, j]`` from input map j to output map i plus one
    bias plane per output map (bias is a full H x W matrix, not a scalar)."""

    def __init__(self, weights, bias, dtype=np.float64):
        self.weights = np.asarray(weights, dtype=dtype)
        self.bias = np.asarray(bias, dtype=dtype)
        if self.weights.ndim != 4 or self.weights.shape[2] % 2 == 0 or self.weights.shape[3] % 2 == 0:
            raise ShapeError(f"weights must be (out, in, odd, odd), got {self.weights.shape}")
        if self.bias.ndim != 3 or self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(f"bias must be (out_maps, H, W), got {self.bias.shape}")
        self.params = [self.weights, self.bias]
        self.grads = [np.zeros_like(self.weights), np.zeros_like(self.bias)]
        self._cols = None
        self._x_shape = None
        self.inject = None

    @classmethod
    def zeros(cls, in_maps, out_maps, height, width, kernel=(3, 3)):
        return cls(np.zeros((out_maps, in_maps) + tuple(kernel)), np.zeros((out_maps, height, width)))

    @property
    def in_maps(self) -> int:
        return self.weights.shape[1]

    @property
    def out_maps(self) -> int:
        return self.weights.shape[0]

    def filter(self, i, j) -> Filter:
        return Filter(self.weights[i, j])

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_maps:
            raise ShapeError(f"expected (N, {self.in_maps}, H, W) input, got {x.shape}")
        if x.shape[2:] != self.bias.shape[1:]:
            raise ShapeError(f"input plane {x.shape[2:]} does not match bias plane {self.bias.shape[1:]}")
        y, self._cols = conv_batch(x, self.weights, self.bias)
        self._x_shape = x.shape
        if self.inject is not None:
            y = y + self.inject
        return y

    def unit_responses(self, start, stop):
        """Output change per unit change of parameters ``start:stop``.

        Parameters are numbered weights-then-bias in C order, matching
        ``params``. Uses the input cached by the last forward (batch of one)
        and returns an array (stop - start, out_maps, H, W).
        """
        cols = self._require_cache("_cols")
        _, _, h, w = self._x_shape
        cout, k = self.out_maps, cols.shape[0]
        n_w = cout * k
        patches = _crop(cols, self._x_shape, *self.weights.shape[2:])[:, 0]
        out = np.zeros((stop - start, cout, h, w))
        for row, idx in enumerate(range(start, stop)):
            if idx < n_w:
                o, col = divmod(idx, k)
                out[row, o] = patches[col]
            else:
                out[row].flat[idx - n_w] = 1.0
        return out

    def backward(self, dy):
        cols = self._require_cache("_cols")
        dx, dw, db = conv_batch_backward(dy, cols, self.weights, self._x_shape)
        self.grads[0][...] = dw
        self.grads[1][...] = db
        return dx


class ReLU(Layer):
    def __init__(self):
        self.params, self.grads = [], []
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        # derivative at exactly zero is taken as 0
        return np.where(self._require_cache("_mask"), dy, 0.0)


class MaxPool2(Layer):
    """2x2 / stride-2 pooling; gradient goes to the first maximal element of
    each window in row-major order."""

    def __init__(self):
        self.params, self.grads = [], []
        self._arg = None

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"max pooling needs even height and width, got {h}x{w}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        self._arg = win.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        arg = self._require_cache("_arg")
        n, c, h, w = self._x_shape
        d = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(d, arg[..., None], dy[..., None], axis=-1)
        return d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class ResidualBlock(Layer):
    """relu(conv_b(relu(conv_a(x))) + shortcut(x)).

    The shortcut is the identity unless ``projection`` (a 1x1 ConvLayer) is
    given, which is required exactly when conv_b changes the number of maps.
    """

    def __init__(self, conv_a: ConvLayer, conv_b: ConvLayer, projection: ConvLayer | None = None):
        if conv_a.out_maps != conv_b.in_maps:
            raise ShapeError("conv_a output maps must feed conv_b")
        short_maps = projection.out_maps if projection is not None else conv_a.in_maps
        if projection is not None:
            if projection.weights.shape[2:] != (1, 1) or projection.in_maps != conv_a.in_maps:
                raise ShapeError("projection must be a 1x1 convolution from the block input")
        if conv_b.out_maps != short_maps:
            raise ShapeError(
                f"residual path has {conv_b.out_maps} maps but shortcut has {short_maps}")
        self.conv_a, self.conv_b, self.projection = conv_a, conv_b, projection
        self._relu_a, self._relu_out = ReLU(), ReLU()
        self._layers = [conv_a, conv_b] + ([projection] if projection is not None else [])
        self.params = [p for layer in self._layers for p in layer.params]
        self.grads = [g for layer in self._layers for g in layer.grads]
        self._ran = False

    @property
    def in_maps(self):
        return self.conv_a.in_maps

    @property
    def out_maps(self):
        return self.conv_b.out_maps

    def forward(self, x):
        h = self.conv_b.forward(self._relu_a.forward(self.conv_a.forward(x)))
        short = self.projection.forward(x) if self.projection is not None else x
        if short.shape != h.shape:
            raise ShapeError(f"shortcut shape {short.shape} != residual shape {h.shape}")
        self._ran = True
        return self._relu_out.forward(h + short)

    def backward(self, dy):
        if not self._ran:
            raise StateError("ResidualBlock.backward called before forward")
        d = self._relu_out.backward(dy)
        dx = self.conv_a.backward(self._relu_a.backward(self.conv_b.backward(d)))
        if self.projection is not None:
            dx = dx + self.projection.backward(d)
        else:
            dx = dx + d
        return dx


class Flatten(Layer):
    def __init__(self):
        self.params, self.grads = [], []
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._require_cache("_shape"))


class Dense(Layer):
    """y = x @ weights.T + bias for x shaped (N, in_features)."""

    def __init__(self, weights, bias, dtype=np.float64):
        self.weights = np.asarray(weights, dtype=dtype)
        self.bias = np.asarray(bias, dtype=dtype)
        self.params = [self.weights, self.bias]
        self.grads = [np.zeros_like(self.weights), np.zeros_like(self.bias)]
        self._x = None
        self.inject = None

    def forward(self, x):
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"dense layer expects {self.weights.shape[1]} features, got {x.shape[1]}")
        self._x = x
        y = x @ self.weights.T + self.bias
        if self.inject is not None:
            y = y + self.inject
        return y

    def unit_responses(self, start, stop):
        x = self._require_cache("_x")[0]
        n_out, d = self.weights.shape
        out = np.zeros((stop - start, n_out))
        for row, idx in enumerate(range(start, stop)):
            if idx < n_out * d:
                o, j = divmod(idx, d)
                out[row, o] = x[j]
            else:
                out[row, idx - n_out * d] = 1.0
        return out

    def backward(self, dy):
        x = self._require_cache("_x")
        self.grads[0][...] = dy.T @ x
        self.grads[1][...] = dy.sum(axis=0)
        return dy @ self.weights


# --------------------------------------------------------------------------
# single-image wrappers over the layers

def conv_layer_forward(inputs, layer: ConvLayer) -> np.ndarray:
    """Y_i = B_i + sum_j K_ij * Y_j for one (m1, H, W) stack of maps."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[0] != layer.in_maps:
        raise ShapeError(f"layer expects {layer.in_maps} input maps, got shape {inputs.shape}")
    y, _ = conv_batch(inputs[None], layer.weights, layer.bias)
    return y[0]


def residual_block_forward(x, block: ResidualBlock) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got {x.shape}")
    return block.forward(x[None])[0]
