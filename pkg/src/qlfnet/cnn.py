"""Residual CNN classifier: construction, training, prediction, gradient check,
and checkpoint files."""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .conv import ConvLayer, Dense, Flatten, MaxPool2, ReLU, ResidualBlock, conv_batch
from .errors import ParseError, ShapeError
from .metrics import f1_macro

CHECKPOINT_MAGIC = b"QLFNCNN\0"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Network shape. ``blocks`` holds (maps, pool_after) pairs."""

    input_channels: int = 3
    input_height: int = 16
    input_width: int = 16
    stem_maps: int = 8
    blocks: tuple = ((8, True), (16, True))
    dense_hidden: int = 32
    classes: int = 3
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((int(m), bool(p)) for m, p in self.blocks))
        if self.classes < 2:
            raise ValueError(f"a classifier needs at least 2 classes, got {self.classes}")
        if not self.blocks:
            raise ValueError("architecture needs at least one residual block")
        counts = [self.input_channels, self.input_height, self.input_width, self.stem_maps,
                  self.dense_hidden] + [m for m, _ in self.blocks]
        if min(counts) < 1:
            raise ValueError(f"all layer sizes must be >= 1: {self}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        step = 2 ** self.pools
        if self.input_height % step or self.input_width % step:
            raise ValueError(
                f"input {self.input_height}x{self.input_width} is not divisible by 2^{self.pools} pooling steps")

    @property
    def pools(self) -> int:
        return sum(p for _, p in self.blocks)

    @property
    def feature_shape(self) -> tuple:
        step = 2 ** self.pools
        return (self.blocks[-1][0], self.input_height // step, self.input_width // step)

    @property
    def head_inputs(self) -> int:
        return int(np.prod(self.feature_shape))

    def with_input(self, channels, height, width, classes=None) -> "ArchSpec":
        kw = asdict(self)
        kw.update(input_channels=channels, input_height=height, input_width=width)
        if classes is not None:
            kw["classes"] = classes
        return ArchSpec(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d) -> "ArchSpec":
        return cls(**{**d, "blocks": tuple(tuple(b) for b in d["blocks"])})


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    l2: float = 1e-4
    dtype: str = "float64"  # arithmetic precision while training
    flips: bool = False  # random horizontal / vertical flips of training images

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


class CnnModel:
    """stem conv -> relu -> residual blocks (optionally pooled) -> flatten ->
    dense hidden -> relu -> dense logits."""

    def __init__(self, arch: ArchSpec, stem: ConvLayer, blocks, hidden: Dense, out: Dense):
        self.arch = arch
        self.stem = stem
        self.blocks = list(blocks)
        self.hidden = hidden
        self.out = out
        self.layers = [stem, ReLU()]
        for block, (_, pool) in zip(self.blocks, arch.blocks):
            self.layers.append(block)
            if pool:
                self.layers.append(MaxPool2())
        self.layers += [Flatten(), hidden, ReLU(), out]
        if hidden.weights.shape[1] != arch.head_inputs:
            raise ShapeError(f"head expects {hidden.weights.shape[1]} inputs, features give {arch.head_inputs}")

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def linear_layers(self):
        """Every ConvLayer / Dense in parameter declaration order."""
        found = []
        for layer in self.layers:
            if isinstance(layer, ResidualBlock):
                found += layer._layers
            elif isinstance(layer, (ConvLayer, Dense)):
                found.append(layer)
        return found

    @property
    def dtype(self):
        return self.stem.weights.dtype

    def astype(self, dtype) -> "CnnModel":
        """A copy whose parameters and arithmetic use ``dtype``."""
        def cast(layer):
            return type(layer)(layer.weights.astype(dtype), layer.bias.astype(dtype), dtype=dtype)

        blocks = [ResidualBlock(cast(b.conv_a), cast(b.conv_b), cast(b.projection) if b.projection else None)
                  for b in self.blocks]
        return CnnModel(self.arch, cast(self.stem), blocks, cast(self.hidden), cast(self.out))

    def forward_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        expect = (self.arch.input_channels, self.arch.input_height, self.arch.input_width)
        if x.ndim != 4 or x.shape[1:] != expect:
            raise ShapeError(f"model expects images shaped {expect}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward_batch(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)

    def get_params(self):
        return [p.copy() for p in self.params]

    def set_params(self, values):
        for p, v in zip(self.params, values):
            p[...] = v

    def parameter_bytes(self) -> bytes:
        return b"".join(p.astype("<f8").tobytes() for p in self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def _uniform(rng, shape, fan_in, gain):
    lim = np.sqrt(gain / fan_in)
    return rng.uniform(-lim, lim, size=shape)


def build_model(arch: ArchSpec, seed: int = 0) -> CnnModel:
    """Fan-in scaled uniform weights, zero biases; fully determined by seed.

    The second conv of each residual branch starts at a tenth of the usual
    scale, so every block begins close to the identity and the logits of a
    deep stack stay small at the first SGD steps.
    """
    if not isinstance(arch, ArchSpec):
        raise ValueError("build_model needs an ArchSpec")
    rng = np.random.default_rng(seed)
    k = arch.kernel
    h, w = arch.input_height, arch.input_width

    def conv(cin, cout, ksize, gain):
        weights = _uniform(rng, (cout, cin, ksize, ksize), cin * ksize * ksize, gain)
        return ConvLayer(weights, np.zeros((cout, h, w)))

    stem = conv(arch.input_channels, arch.stem_maps, k, 6.0)
    blocks = []
    maps = arch.stem_maps
    for out_maps, pool in arch.blocks:
        conv_a = conv(maps, out_maps, k, 6.0)
        conv_b = conv(out_maps, out_maps, k, 0.03)
        proj = conv(maps, out_maps, 1, 3.0) if maps != out_maps else None
        blocks.append(ResidualBlock(conv_a, conv_b, proj))
        maps = out_maps
        if pool:
            h, w = h // 2, w // 2
    d = arch.head_inputs
    hidden = Dense(_uniform(rng, (arch.dense_hidden, d), d, 6.0), np.zeros(arch.dense_hidden))
    out = Dense(_uniform(rng, (arch.classes, arch.dense_hidden), arch.dense_hidden, 3.0), np.zeros(arch.classes))
    return CnnModel(arch, stem, blocks, hidden, out)


def forward(model: CnnModel, image) -> np.ndarray:
    """Class logits for one (C, H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) image, got shape {image.shape}")
    return model.forward_batch(image[None])[0]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label: int):
    """(loss, d loss / d logits) for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    losses, grad = _xent_batch(logits[None], np.array([label]))
    return float(losses[0]), grad[0]


def _xent_batch(logits, labels):
    """Per-sample losses and per-sample logit gradients (not averaged)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    losses = lse - shifted[rows, labels]
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return losses, grad


def _xy(data):
    if hasattr(data, "images"):
        return np.asarray(data.images, dtype=np.float64), np.asarray(data.labels, dtype=np.int64)
    images, labels = data
    return np.asarray(images, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def _logits(model, images, chunk=64):
    if len(images) == 0:
        return np.zeros((0, model.arch.classes))
    return np.concatenate([model.forward_batch(images[i:i + chunk]) for i in range(0, len(images), chunk)])


def predict(model: CnnModel, images) -> np.ndarray:
    """Argmax labels; ties go to the smallest class index."""
    if hasattr(images, "images"):
        images = images.images
    images = np.asarray(images, dtype=model.dtype)
    if images.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(_logits(model, images), axis=1)


def mean_loss(model, images, labels) -> float:
    losses, _ = _xent_batch(_logits(model, images), labels)
    return float(losses.mean())


def train(model: CnnModel, train_set, val_set, cfg: TrainConfig):
    """Mini-batch SGD with momentum and L2 weight decay.

    Returns a trained copy of ``model`` holding the parameters of the epoch with
    the best validation macro-F1 (earliest epoch on ties; epoch 0 is the
    untrained model) and a history dict with per-epoch ``train_loss``
    (full training-set loss after the epoch), ``val_f1`` and ``best_epoch``.
    With ``cfg.dtype == "float32"`` the arithmetic runs in single precision
    and the returned model is cast back to the input model's precision.
    ``cfg.flips`` mirrors each training image left-right and up-down with
    probability 1/2 per batch, for data whose labels do not depend on it.
    """
    X, y = _xy(train_set)
    Xv, yv = _xy(val_set)
    if len(y) == 0 or len(yv) == 0:
        raise ValueError("training and validation sets must be non-empty")
    out_dtype = model.dtype
    model = model.astype(np.dtype(cfg.dtype))
    X, Xv = X.astype(model.dtype), Xv.astype(model.dtype)
    order_rng = np.random.default_rng([cfg.seed, 1])
    flip_rng = np.random.default_rng([cfg.seed, 2])
    velocity = [np.zeros_like(p) for p in model.params]
    params, grads = model.params, model.grads

    history = {"train_loss": [mean_loss(model, X, y)], "val_f1": [f1_macro(yv, predict(model, Xv))]}
    best_f1, best_epoch, best_params = history["val_f1"][0], 0, model.get_params()
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            if cfg.flips:
                xb = xb.copy()
                across, down = flip_rng.random((2, len(idx))) < 0.5
                xb[across] = xb[across, :, :, ::-1]
                xb[down] = xb[down, :, ::-1, :]
            logits = model.forward_batch(xb)
            _, dlogits = _xent_batch(logits, y[idx])
            model.backward_batch(dlogits / len(idx))
            for p, g, v in zip(params, grads, velocity):
                v *= cfg.momentum
                v -= cfg.learning_rate * (g + cfg.l2 * p)
                p += v
        history["train_loss"].append(mean_loss(model, X, y))
        val_f1 = f1_macro(yv, predict(model, Xv))
        history["val_f1"].append(val_f1)
        if val_f1 > best_f1:
            best_f1, best_epoch, best_params = val_f1, epoch, model.get_params()
    model.set_params(best_params)
    history["best_epoch"] = best_epoch
    return model.astype(out_dtype), history


# --------------------------------------------------------------------------
# gradient verification
#
# The numeric side evaluates loss(p + eps) - loss(p - eps) for every parameter p.
# Each ConvLayer / Dense is linear in its own parameters, so nudging p by +-eps
# shifts that layer's output by +-eps times its unit response. Instead of
# running the two nudged networks separately and subtracting two losses of
# size ~1 (which loses about 1e-11 to rounding), the forward map is applied to
# the pair (mid, half) = ((y+ + y-) / 2, (y+ - y-) / 2) of nudged activations.
# Linear layers map both exactly, ReLU and pooling evaluate both branches
# exactly (kinks included), and the final loss difference is formed from the
# logit half-differences without cancellation.

def _pair_relu(m, d, kinked):
    both_on = m - np.abs(d) > 0
    both_off = m + np.abs(d) <= 0
    mixed = ~(both_on | both_off)
    m2 = np.where(both_on, m, 0.0)
    d2 = np.where(both_on, d, 0.0)
    if mixed.any():
        hi, lo = np.maximum(m + d, 0.0), np.maximum(m - d, 0.0)
        m2 = np.where(mixed, (hi + lo) / 2, m2)
        d2 = np.where(mixed, (hi - lo) / 2, d2)
        kinked |= mixed.reshape(len(m), -1).any(axis=1)
    return m2, d2


def _pair_pool(m, d, kinked):
    def windows(x):
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)

    mw, dw = windows(m), windows(d)
    hi, lo = mw + dw, mw - dw
    ahi, alo = hi.argmax(axis=-1)[..., None], lo.argmax(axis=-1)[..., None]
    same = (ahi == alo)[..., 0]
    m2 = np.where(same, np.take_along_axis(mw, ahi, -1)[..., 0],
                  (np.take_along_axis(hi, ahi, -1)[..., 0] + np.take_along_axis(lo, alo, -1)[..., 0]) / 2)
    d2 = np.where(same, np.take_along_axis(dw, ahi, -1)[..., 0],
                  (np.take_along_axis(hi, ahi, -1)[..., 0] - np.take_along_axis(lo, alo, -1)[..., 0]) / 2)
    kinked |= (~same).reshape(len(m), -1).any(axis=1)
    return m2, d2


def _pair_linear(layer, m, d, inject):
    if isinstance(layer, ConvLayer):
        m2, _ = conv_batch(m, layer.weights, layer.bias)
        d2, _ = conv_batch(d, layer.weights)
    else:
        m2, d2 = m @ layer.weights.T + layer.bias, d @ layer.weights.T
    if layer is inject[0]:
        d2 = d2 + inject[1]
    return m2, d2


def _pair_step(layer, m, d, inject, kinked):
    if isinstance(layer, (ConvLayer, Dense)):
        return _pair_linear(layer, m, d, inject)
    if isinstance(layer, ReLU):
        return _pair_relu(m, d, kinked)
    if isinstance(layer, MaxPool2):
        return _pair_pool(m, d, kinked)
    if isinstance(layer, Flatten):
        return m.reshape(len(m), -1), d.reshape(len(d), -1)
    if isinstance(layer, ResidualBlock):
        am, ad = _pair_relu(*_pair_linear(layer.conv_a, m, d, inject), kinked)
        hm, hd = _pair_linear(layer.conv_b, am, ad, inject)
        if layer.projection is not None:
            sm, sd = _pair_linear(layer.projection, m, d, inject)
        else:
            sm, sd = m, d
        return _pair_relu(hm + sm, hd + sd, kinked)
    raise TypeError(f"no pair rule for {type(layer).__name__}")


def _loss_differences(model, start, x_in, label, layer, delta):
    """loss(nudged +) - loss(nudged -) for each row of ``delta`` plus a flag
    telling whether the nudge moved any ReLU / pooling switch."""
    k = len(delta)
    m = np.broadcast_to(x_in, (k,) + x_in.shape)
    d = np.zeros_like(m)
    kinked = np.zeros(k, dtype=bool)
    for top in model.layers[start:]:
        m, d = _pair_step(top, m, d, (layer, delta), kinked)
    return _secant(m, d, label), kinked


def _secant(m, d, label):
    p = softmax(m)
    up = np.log1p(np.sum(p * np.expm1(d), axis=1))
    down = np.log1p(np.sum(p * np.expm1(-d), axis=1))
    return (up - down) - 2 * d[:, label]


def _linear_piece_differences(model, start, base, label, layer, delta):
    """Same as ``_loss_differences`` for nudges that stay on the current linear
    piece: the midpoint track is then the unperturbed activations ``base``
    (recorded per top-level layer and per block stage), so only the
    half-differences are propagated. Rows whose nudge leaves the piece are
    flagged and must be redone with ``_loss_differences``."""
    k = len(delta)
    d = None
    off = np.zeros(k, dtype=bool)

    def lin(lyr, d):
        if d is None:
            out = None
        elif isinstance(lyr, ConvLayer):
            out, _ = conv_batch(d, lyr.weights)
        else:
            out = d @ lyr.weights.T
        if lyr is layer:
            out = delta if out is None else out + delta
        return out

    def gate(m_pre, d):
        if d is None:
            return None
        mixed = (np.abs(d) >= np.abs(m_pre)) & (d != 0)
        off[:] |= mixed.reshape(k, -1).any(axis=1)
        return np.where(m_pre > 0, d, 0.0)

    for t in range(start, len(model.layers)):
        top = model.layers[t]
        if isinstance(top, (ConvLayer, Dense)):
            d = lin(top, d)
        elif isinstance(top, ReLU):
            d = gate(base[t]["in"], d)
        elif isinstance(top, Flatten):
            d = None if d is None else d.reshape(k, -1)
        elif isinstance(top, MaxPool2):
            if d is not None:
                m_in = base[t]["in"]
                n, c, h, w = d.shape
                win = lambda x: x.reshape(-1, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
                    x.shape[0], c, h // 2, w // 2, 4)
                mw, dw = win(m_in[None]), win(d)
                arg = mw.argmax(axis=-1)[..., None]
                hi, lo = (mw + dw).argmax(axis=-1)[..., None], (mw - dw).argmax(axis=-1)[..., None]
                off[:] |= ((hi != arg) | (lo != arg)).reshape(k, -1).any(axis=1)
                d = np.take_along_axis(dw, np.broadcast_to(arg, dw.shape[:-1] + (1,)), -1)[..., 0]
        else:  # residual block
            stage = base[t]
            a = gate(stage["a_pre"], lin(top.conv_a, d))
            h = lin(top.conv_b, a)
            sc = lin(top.projection, d) if top.projection is not None else d
            tot = h if sc is None else (sc if h is None else h + sc)
            d = gate(stage["out_pre"], tot)
    return _secant(base[len(model.layers)]["in"][None], d, label), off


def analytic_gradient(model: CnnModel, image, label: int) -> np.ndarray:
    """Backpropagated d loss / d parameter for one sample, flattened in
    parameter declaration order."""
    model = model.copy()
    logits = model.forward_batch(np.asarray(image, dtype=np.float64)[None])
    _, dlogits = _xent_batch(logits, np.array([label]))
    model.backward_batch(dlogits)
    return np.concatenate([g.ravel() for layer in model.linear_layers() for g in layer.grads])


def numeric_gradient(model: CnnModel, image, label: int, epsilon: float = 1e-5, chunk: int = 512,
                     retries: int = 3) -> np.ndarray:
    """Central differences (loss(p + eps) - loss(p - eps)) / (2 eps) for every
    parameter, in declaration order.

    A step that moves a ReLU or pooling switch straddles a kink; such
    parameters are re-differenced with eps / 10 (up to ``retries`` times).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    model = model.copy()
    image = np.asarray(image, dtype=np.float64)
    # unperturbed activations: input of every top-level layer plus the two
    # ReLU pre-activations inside each residual block
    base, x = [], image[None]
    for top in model.layers:
        rec = {"in": x[0]}
        if isinstance(top, ResidualBlock):
            a_pre = top.conv_a.forward(x)
            h = top.conv_b.forward(np.maximum(a_pre, 0.0))
            short = top.projection.forward(x) if top.projection is not None else x
            rec.update(a_pre=a_pre[0], out_pre=(h + short)[0])
        base.append(rec)
        x = top.forward(x)
    base.append({"in": x[0]})
    owner = {}
    for t, top in enumerate(model.layers):
        for inner in (top._layers if isinstance(top, ResidualBlock) else [top]):
            owner[id(inner)] = t
    inputs = [rec["in"] for rec in base]

    numeric = []
    for layer in model.linear_layers():
        t = owner[id(layer)]
        n = sum(p.size for p in layer.params)
        fd = np.empty(n)
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            resp = layer.unit_responses(start, stop)
            diff, off = _linear_piece_differences(model, t, base, label, layer, epsilon * resp)
            fd[start:stop] = diff / (2 * epsilon)
            for row in np.flatnonzero(off):
                eps = epsilon
                for _ in range(retries + 1):
                    diff1, k1 = _loss_differences(model, t, inputs[t], label, layer, eps * resp[row:row + 1])
                    fd[start + row] = diff1[0] / (2 * eps)
                    if not k1[0]:
                        break
                    eps /= 10
        numeric.append(fd)

    return np.concatenate(numeric)


def grad_check(model: CnnModel, image, label: int, epsilon: float = 1e-5) -> float:
    """Largest |analytic - numeric| / (|analytic| + 1e-8) over all parameters."""
    analytic = analytic_gradient(model, image, label)
    numeric = numeric_gradient(model, image, label, epsilon)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))



# --------------------------------------------------------------------------
# checkpoints

def save_model(model: CnnModel, path):
    """Binary checkpoint: magic, u32 version, u32-length JSON arch, then each
    parameter array as u32 ndim, u32 dims, little-endian float64 data."""
    arch = json.dumps(model.arch.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arch)))
        fh.write(arch)
        for p in model.params:
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(p.astype("<f8").tobytes())


def load_model(path) -> CnnModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ParseError(path, "not a CNN checkpoint (bad magic bytes)")
    pos = len(CHECKPOINT_MAGIC)
    try:
        version, n = struct.unpack_from("<II", data, pos)
        if version != CHECKPOINT_VERSION:
            raise ParseError(path, f"unsupported checkpoint version {version}")
        pos += 8
        arch = ArchSpec.from_dict(json.loads(data[pos:pos + n].decode("utf-8")))
        pos += n
        model = build_model(arch, 0)
        for p in model.params:
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            if tuple(shape) != p.shape:
                raise ParseError(path, f"parameter shape {shape} does not match architecture {p.shape}")
            count = int(np.prod(shape))
            p[...] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(path, f"truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(data):
        raise ParseError(path, "trailing bytes after last parameter")
    return model
