"""A small deterministic convolutional network built on numpy.

The fixed pipeline descriptor is: side x side x 1 input, 3x3 conv to 8
channels (same padding), ReLU, 2x2 max pool, 3x3 conv to 16 channels,
ReLU, 2x2 max pool, flatten, dense to 128, ReLU, dense to 2 logits. The
post-ReLU dense activations are the feature vectors handed to the
classifier. Reduced descriptors (smaller side/channels) are supported for
tests and gradient checks.

Everything is float64 and seeded through the pinned generator, so forward
passes and training runs are reproducible bit for bit on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import serialize
from .errors import ShapeError, TrainingDivergedError
from .rng import PinnedRng


@dataclass(frozen=True)
class CnnDescriptor:
    side: int = 64
    in_channels: int = 1
    conv_channels: tuple[int, int] = (8, 16)
    kernel: int = 3
    dense_units: int = 128
    n_classes: int = 2

    def __post_init__(self):
        if self.side < 4 or self.side % 4 != 0:
            raise ValueError(f"side must be a positive multiple of 4, got {self.side}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd so same padding is symmetric")
        if min(self.conv_channels) < 1 or self.dense_units < 1 or self.n_classes < 2:
            raise ValueError("channel, dense and class counts must be positive")

    @property
    def flatten_size(self) -> int:
        return (self.side // 4) ** 2 * self.conv_channels[1]


@dataclass(frozen=True)
class CnnNetwork:
    descriptor: CnnDescriptor
    conv1_w: np.ndarray  # (k, k, in_channels, f1)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (k, k, f1, f2)
    conv2_b: np.ndarray
    dense1_w: np.ndarray  # (flatten, dense_units)
    dense1_b: np.ndarray
    dense2_w: np.ndarray  # (dense_units, n_classes)
    dense2_b: np.ndarray
    rng_seed: int

    def params(self) -> tuple[np.ndarray, ...]:
        return (
            self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
            self.dense1_w, self.dense1_b, self.dense2_w, self.dense2_b,
        )

    def with_params(self, params) -> "CnnNetwork":
        names = ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                 "dense1_w", "dense1_b", "dense2_w", "dense2_b")
        return replace(self, **dict(zip(names, params)))


def init_weights(seed: int, descriptor: CnnDescriptor | None = None) -> CnnNetwork:
    """He-initialized network from the pinned generator.

    Weight tensors are filled in C order, drawn in layer order (conv1,
    conv2, dense1, dense2), each scaled by sqrt(2 / fan_in); biases start
    at zero.
    """
    d = descriptor or CnnDescriptor()
    rng = PinnedRng(seed)
    k, cin = d.kernel, d.in_channels
    f1, f2 = d.conv_channels

    def draw(shape, fan_in):
        n = int(np.prod(shape))
        return rng.normal(n).reshape(shape) * np.sqrt(2.0 / fan_in)

    return CnnNetwork(
        descriptor=d,
        conv1_w=draw((k, k, cin, f1), k * k * cin),
        conv1_b=np.zeros(f1),
        conv2_w=draw((k, k, f1, f2), k * k * f1),
        conv2_b=np.zeros(f2),
        dense1_w=draw((d.flatten_size, d.dense_units), d.flatten_size),
        dense1_b=np.zeros(d.dense_units),
        dense2_w=draw((d.dense_units, d.n_classes), d.dense_units),
        dense2_b=np.zeros(d.n_classes),
        rng_seed=int(seed),
    )


# ---------------------------------------------------------------------------
# layer primitives
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    h2 = xp.shape[0] - kh + 1
    w2 = xp.shape[1] - kw + 1
    cin = xp.shape[2]
    cols = np.empty((h2, w2, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :] = xp[i : i + h2, j : j + w2, :]
    return cols.reshape(h2 * w2, kh * kw * cin)


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    top, left = (kh - 1) // 2, (kw - 1) // 2
    return np.pad(x, ((top, kh - 1 - top), (left, kw - 1 - left), (0, 0)))


def conv2d(x, kernels, padding: str = "same") -> np.ndarray:
    """Stride-1 cross-correlation of an H x W x C input with kh x kw x C x F
    kernels. Same padding is zero padding, the extra row/column going to
    the bottom/right when the total is odd."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"expected 3-D input and 4-D kernels, got {x.shape} and {kernels.shape}")
    kh, kw, cin, f = kernels.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels, kernels expect {cin}")
    if padding == "same":
        xp = _pad_same(x, kh, kw)
    elif padding == "valid":
        if kh > x.shape[0] or kw > x.shape[1]:
            raise ShapeError(f"kernel {kh}x{kw} does not fit input {x.shape[:2]} without padding")
        xp = x
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    h2 = xp.shape[0] - kh + 1
    w2 = xp.shape[1] - kw + 1
    out = _im2col(xp, kh, kw) @ kernels.reshape(-1, f)
    return out.reshape(h2, w2, f)


def _conv2d_backward(x, kernels, dy, padding):
    kh, kw, cin, f = kernels.shape
    xp = _pad_same(x, kh, kw) if padding == "same" else x
    h2, w2, _ = dy.shape
    dy2 = dy.reshape(h2 * w2, f)
    dw = (_im2col(xp, kh, kw).T @ dy2).reshape(kh, kw, cin, f)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ kernels.reshape(-1, f).T).reshape(h2, w2, kh, kw, cin)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[i : i + h2, j : j + w2, :] += dcols[:, :, i, j, :]
    if padding == "same":
        top, left = (kh - 1) // 2, (kw - 1) // 2
        dx = dxp[top : top + x.shape[0], left : left + x.shape[1], :]
    else:
        dx = dxp
    return dw, db, dx


def maxpool2x2(x) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max pooling. Returns the pooled map and the flat
    in-window argmax (0..3, row-major within the window; ties take the
    first), which routes gradients during backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected H x W x C input, got shape {x.shape}")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"height and width must be even, got {h}x{w}")
    windows = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    idx = np.argmax(windows, axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, idx


def _maxpool_backward(idx, dy, shape):
    h, w, c = shape
    dwin = np.zeros((h // 2, w // 2, c, 4))
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=3)
    return dwin.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


# ---------------------------------------------------------------------------
# network forward / backward
# ---------------------------------------------------------------------------

def _forward(net: CnnNetwork, image: np.ndarray):
    d = net.descriptor
    x0 = image.reshape(d.side, d.side, d.in_channels)
    z1 = conv2d(x0, net.conv1_w) + net.conv1_b
    r1 = np.maximum(z1, 0.0)
    p1, i1 = maxpool2x2(r1)
    z2 = conv2d(p1, net.conv2_w) + net.conv2_b
    r2 = np.maximum(z2, 0.0)
    p2, i2 = maxpool2x2(r2)
    flat = p2.reshape(-1)
    z3 = flat @ net.dense1_w + net.dense1_b
    r3 = np.maximum(z3, 0.0)
    z4 = r3 @ net.dense2_w + net.dense2_b
    cache = (x0, z1, r1, p1, i1, z2, r2, p2, i2, flat, z3, r3)
    return z4, r3, cache


def _loss_and_grads(net: CnnNetwork, image: np.ndarray, target: int):
    logits, _, cache = _forward(net, image)
    x0, z1, r1, p1, i1, z2, r2, p2, i2, flat, z3, r3 = cache
    p = softmax(logits)
    m = np.max(logits)
    loss = float(m + np.log(np.sum(np.exp(logits - m))) - logits[target])
    dlogits = p.copy()
    dlogits[target] -= 1.0

    ddense2_w = np.outer(r3, dlogits)
    ddense2_b = dlogits
    dr3 = net.dense2_w @ dlogits
    dz3 = dr3 * (z3 > 0.0)
    ddense1_w = np.outer(flat, dz3)
    ddense1_b = dz3
    dflat = net.dense1_w @ dz3
    dp2 = dflat.reshape(p2.shape)
    dr2 = _maxpool_backward(i2, dp2, r2.shape)
    dz2 = dr2 * (z2 > 0.0)
    dconv2_w, dconv2_b, dp1 = _conv2d_backward(p1, net.conv2_w, dz2, "same")
    dr1 = _maxpool_backward(i1, dp1, r1.shape)
    dz1 = dr1 * (z1 > 0.0)
    dconv1_w, dconv1_b, _ = _conv2d_backward(x0, net.conv1_w, dz1, "same")

    grads = (dconv1_w, dconv1_b, dconv2_w, dconv2_b,
             ddense1_w, ddense1_b, ddense2_w, ddense2_b)
    return loss, grads


def _check_image(net: CnnNetwork, image) -> np.ndarray:
    d = net.descriptor
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (d.side, d.side):
        raise ShapeError(f"image shape {img.shape} != expected ({d.side}, {d.side})")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def forward_extract(net: CnnNetwork, image) -> tuple[np.ndarray, np.ndarray]:
    """Run the network on one side x side image in [0, 1]; returns the
    post-ReLU dense activations (the feature vector) and the logits."""
    img = _check_image(net, image)
    logits, features, _ = _forward(net, img)
    return features, logits


def predict_label(net: CnnNetwork, image) -> int:
    _, logits = forward_extract(net, image)
    return int(np.argmax(logits))  # first maximum -> lower label on ties


def train_sgd(net: CnnNetwork, images, labels, epochs: int, learning_rate: float,
              seed: int) -> tuple[CnnNetwork, list[float]]:
    """Plain per-sample SGD on softmax cross-entropy.

    The visit order each epoch is a pinned-generator permutation, so runs
    are reproducible for a fixed seed. Returns the trained network and the
    per-epoch mean loss (measured before each update, as usual for online
    traces).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ShapeError("images must be a nonempty (N, side, side) array")
    if labels.shape != (images.shape[0],):
        raise ShapeError("labels must match images")
    if learning_rate < 0.0:
        raise ValueError("learning_rate must be nonnegative")
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    for img in images:
        _check_image(net, img)
    params = [p.copy() for p in net.params()]
    rng = PinnedRng(seed)
    trace: list[float] = []
    current = net.with_params(tuple(params))
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for idx in order:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _loss_and_grads(current, images[idx], int(labels[idx]))
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
            total += loss
            for p, g in zip(params, grads):
                p -= learning_rate * g
            current = current.with_params(tuple(params))
        trace.append(total / len(images))
    return current, trace


def _loss_only(net: CnnNetwork, image: np.ndarray, target: int) -> float:
    logits, _, _ = _forward(net, image)
    m = np.max(logits)
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[target])


def gradient_check(net: CnnNetwork, image, target: int, step: float = 1e-5) -> float:
    """Max over parameters of the relative gap between the analytic gradient
    and a central finite difference of the loss."""
    img = _check_image(net, image)
    _, analytic = _loss_and_grads(net, img, int(target))

    def loss_with(params):
        return _loss_only(net.with_params(tuple(params)), img, int(target))

    base = [p.copy() for p in net.params()]
    worst = 0.0
    for ai, grad in enumerate(analytic):
        flat_param = base[ai]
        it = np.nditer(flat_param, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            keep = flat_param[ix]
            flat_param[ix] = keep + step
            up = loss_with(base)
            flat_param[ix] = keep - step
            down = loss_with(base)
            flat_param[ix] = keep
            numeric = (up - down) / (2.0 * step)
            ga = float(grad[ix])
            rel = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
            worst = max(worst, rel)
            it.iternext()
    return worst


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

_CONV, _DENSE = 0, 1


def save_network(net: CnnNetwork, path) -> None:
    d = net.descriptor
    w = serialize.ByteWriter(serialize.NETWORK_MAGIC)
    w.u64(net.rng_seed & 0xFFFFFFFFFFFFFFFF)
    w.u32(d.side)
    w.u32(d.in_channels)
    w.u32(d.kernel)
    w.u32(d.dense_units)
    w.u32(d.n_classes)
    w.u32(len(d.conv_channels))
    for c in d.conv_channels:
        w.u32(c)
    layers = [
        (_CONV, net.conv1_w, net.conv1_b),
        (_CONV, net.conv2_w, net.conv2_b),
        (_DENSE, net.dense1_w, net.dense1_b),
        (_DENSE, net.dense2_w, net.dense2_b),
    ]
    w.u32(len(layers))
    for kind, weights, bias in layers:
        w.u8(kind)
        w.u32(weights.ndim)
        for s in weights.shape:
            w.u32(s)
        w.f64_block(weights)
        w.f64_block(bias)
    with open(path, "wb") as fh:
        fh.write(w.finish())


def load_network(path) -> CnnNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    r = serialize.ByteReader(data, serialize.NETWORK_MAGIC)
    seed = r.u64()
    side, cin, kernel, dense_units, n_classes = (r.u32() for _ in range(5))
    n_conv = r.u32()
    conv_channels = tuple(r.u32() for _ in range(n_conv))
    desc = CnnDescriptor(side=side, in_channels=cin, conv_channels=conv_channels,
                         kernel=kernel, dense_units=dense_units, n_classes=n_classes)
    n_layers = r.u32()
    if n_layers != 4:
        raise ValueError(f"expected 4 layers, file has {n_layers}")
    tensors = []
    for _ in range(n_layers):
        r.u8()  # layer kind, implied by position
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        weights = r.f64_block().reshape(shape)
        bias = r.f64_block()
        tensors.append((weights, bias))
    r.finish()
    net = CnnNetwork(
        descriptor=desc,
        conv1_w=tensors[0][0], conv1_b=tensors[0][1],
        conv2_w=tensors[1][0], conv2_b=tensors[1][1],
        dense1_w=tensors[2][0], dense1_b=tensors[2][1],
        dense2_w=tensors[3][0], dense2_b=tensors[3][1],
        rng_seed=seed,
    )
    _validate_shapes(net)
    return net


def _validate_shapes(net: CnnNetwork) -> None:
    d = net.descriptor
    k, cin = d.kernel, d.in_channels
    f1, f2 = d.conv_channels
    expected = (
        (k, k, cin, f1), (f1,), (k, k, f1, f2), (f2,),
        (d.flatten_size, d.dense_units), (d.dense_units,),
        (d.dense_units, d.n_classes), (d.n_classes,),
    )
    for p, shape in zip(net.params(), expected):
        if p.shape != shape:
            raise ShapeError(f"parameter shape {p.shape} != descriptor shape {shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("network parameters contain non-finite values")
