"""Small same-padded convolutional network with exact backprop and Adam.

Parameters are kept as a list of ``(weight, bias)`` pairs, one per layer.
The canonical flat ordering used everywhere (gradient vectors, Adam moments,
checkpoint files) is layer by layer, weight first in C order with shape
``(out, in, k, k)``, then the bias of length ``out``.  Layers at index
``head_boundary`` and after form the head; earlier layers form the body.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "sigmoid")

CHECKPOINT_MAGIC = b"SALC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    in_channels: int
    out_channels: int
    activation: str

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def n_params(self):
        return self.out_channels * self.in_channels * self.kernel**2 + self.out_channels


def default_architecture(in_channels=3, hidden=16):
    """Two 3x3 ReLU body layers followed by a 1x1 sigmoid head."""
    return [
        LayerSpec(3, in_channels, hidden, "relu"),
        LayerSpec(3, hidden, hidden, "relu"),
        LayerSpec(1, hidden, 1, "sigmoid"),
    ]


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _im2col(x, k):
    """(N, H, W, C) -> (N*H*W, k*k*C) with zero same-padding, channels innermost."""
    n, h, w, c = x.shape
    if k == 1:
        return x.reshape(n * h * w, c)
    p = k // 2
    x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N, H, W, C, k, k
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def _weight_matrix(wt):
    """(out, in, k, k) -> (out, k*k*in) matching the im2col column order."""
    return wt.transpose(0, 2, 3, 1).reshape(wt.shape[0], -1)


@dataclass
class _Cache:
    source: np.ndarray
    cols: list = field(default_factory=list)
    acts: list = field(default_factory=list)


class ConvNet:
    """Stack of same-padded conv layers with a body/head split.

    Parameters
    ----------
    layers : list of LayerSpec
        Chain-compatible layers; the last one must use a sigmoid so that
        outputs are saliency values in [0, 1].
    params : list of (weight, bias), optional
        Zero-initialised when omitted.
    head_boundary : int, optional
        Index of the first head layer; defaults to the last layer.
    """

    def __init__(self, layers, params=None, head_boundary=None, dtype=np.float32):
        layers = list(layers)
        if not layers:
            raise ValueError("a model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"layer shapes are not chain-compatible: {a.out_channels} -> {b.in_channels}"
                )
        if layers[-1].activation != "sigmoid" or layers[-1].out_channels != 1:
            raise ValueError("final layer must be a single-channel sigmoid")
        if head_boundary is None:
            head_boundary = len(layers) - 1
        if not 0 <= head_boundary <= len(layers):
            raise ValueError(f"head_boundary {head_boundary} outside [0, {len(layers)}]")
        self.layers = layers
        self.head_boundary = int(head_boundary)
        self.dtype = np.dtype(dtype)
        if params is None:
            params = [
                (np.zeros(l.weight_shape, self.dtype), np.zeros(l.out_channels, self.dtype))
                for l in layers
            ]
        self.params = []
        for l, (w, b) in zip(layers, params, strict=True):
            w = np.array(w, dtype=self.dtype)
            b = np.array(b, dtype=self.dtype)
            if w.shape != l.weight_shape or b.shape != (l.out_channels,):
                raise ValueError(f"parameter shapes {w.shape}, {b.shape} do not match {l}")
            self.params.append((w, b))
        self._cache = None

    @classmethod
    def initialized(cls, layers, rng, head_boundary=None, dtype=np.float32):
        """Uniform(+-sqrt(1/fan_in)) weights, zero biases."""
        params = []
        for l in layers:
            bound = np.sqrt(1.0 / (l.in_channels * l.kernel**2))
            w = rng.uniform(-bound, bound, size=l.weight_shape)
            params.append((w, np.zeros(l.out_channels)))
        return cls(layers, params, head_boundary=head_boundary, dtype=dtype)

    def copy(self):
        return ConvNet(
            self.layers,
            [(w.copy(), b.copy()) for w, b in self.params],
            self.head_boundary,
            self.dtype,
        )

    def astype(self, dtype):
        return ConvNet(self.layers, self.params, self.head_boundary, dtype)

    def with_head_layers(self, k):
        """Same parameters, head made of the last ``k`` layers."""
        out = self.copy()
        if not 0 <= k <= len(self.layers):
            raise ValueError(f"head layer count {k} outside [0, {len(self.layers)}]")
        out.head_boundary = len(self.layers) - k
        return out

    # -- sizes -------------------------------------------------------------

    @property
    def n_params(self):
        return sum(l.n_params for l in self.layers)

    @property
    def n_head_params(self):
        return sum(l.n_params for l in self.layers[self.head_boundary:])

    @property
    def n_body_params(self):
        return self.n_params - self.n_head_params

    def segments(self):
        """``(label, slice)`` for every weight and bias in flat order."""
        out, start = [], 0
        for i, l in enumerate(self.layers):
            nw = l.n_params - l.out_channels
            out.append((f"layer {i} weight", slice(start, start + nw)))
            out.append((f"layer {i} bias", slice(start + nw, start + l.n_params)))
            start += l.n_params
        return out

    # -- flat views --------------------------------------------------------

    def get_flat(self):
        return flatten(self.params, self.dtype)

    def set_flat(self, vec):
        self.params = unflatten(vec, self.layers, self.dtype)

    def head_vector(self):
        return flatten(self.params[self.head_boundary:], self.dtype)

    def set_head_vector(self, vec):
        self.params[self.head_boundary:] = unflatten(
            vec, self.layers[self.head_boundary:], self.dtype
        )

    # -- compute -----------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4:
            raise ValueError(f"expected input of shape (C, H, W) or (N, C, H, W), got {x.shape}")
        if x.shape[1] != self.layers[0].in_channels:
            raise ValueError(
                f"input has {x.shape[1]} channels but the first layer expects "
                f"{self.layers[0].in_channels}"
            )
        return x.astype(self.dtype, copy=False), single

    def forward(self, x, cache=False):
        """Predict saliency maps for ``x`` of shape (C, H, W) or (N, C, H, W).

        With ``cache=True`` the activations needed by :meth:`backward` are
        kept on the model; the returned prediction is unaffected either way.
        """
        source = x
        x, single = self._check_input(x)
        n, _, h, w = x.shape
        c = _Cache(source) if cache else None
        a = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        for l, (wt, b) in zip(self.layers, self.params):
            cols = _im2col(a, l.kernel)
            z = (cols @ _weight_matrix(wt).T + b).reshape(n, h, w, l.out_channels)
            a = np.maximum(z, 0) if l.activation == "relu" else _sigmoid(z)
            if c is not None:
                c.cols.append(cols)
                c.acts.append(a)
        if cache:
            self._cache = c
        out = a[..., 0]
        return out[0] if single else out

    def backward(self, x, output_grad, head_only=False):
        """Gradients of a scalar loss whose map-gradient is ``output_grad``.

        Requires a preceding ``forward(x, cache=True)`` on the same input
        object.  Returns ``(body_grad, head_grad)`` as flat vectors in the
        canonical order.  With ``head_only=True`` the body gradient is not
        computed and an empty vector is returned in its place.
        """
        c = self._cache
        if c is None or c.source is not x:
            raise RuntimeError("backward called without a cached forward pass for this input")
        g = np.asarray(output_grad, dtype=self.dtype)
        if g.ndim == 2:
            g = g[None]
        if g.shape != c.acts[-1].shape[:3]:
            raise ValueError(f"output_grad shape {g.shape} does not match prediction shape")
        g = g[..., None]
        stop = self.head_boundary if head_only else 0
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, stop - 1, -1):
            l = self.layers[i]
            a = c.acts[i]
            if l.activation == "relu":
                dz = g * (a > 0)
            else:
                dz = g * a * (1 - a)
            dzf = dz.reshape(-1, l.out_channels)
            wt = self.params[i][0]
            k = l.kernel
            gw = (dzf.T @ c.cols[i]).reshape(l.out_channels, k, k, l.in_channels)
            grads[i] = (gw.transpose(0, 3, 1, 2), dzf.sum(axis=0))
            if i > stop:
                # input gradient of a same-padded conv is a same-padded conv
                # of dz with the spatially flipped, transposed kernel
                flipped = wt[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                g = (_im2col(dz, k) @ _weight_matrix(flipped).T).reshape(a.shape[:3] + (l.in_channels,))
        head = flatten(grads[self.head_boundary:], self.dtype)
        if head_only:
            return np.zeros(0, self.dtype), head
        return flatten(grads[:self.head_boundary], self.dtype), head


def flatten(params, dtype=np.float32):
    """Concatenate ``(weight, bias)`` pairs into one vector in canonical order."""
    parts = [p.ravel() for pair in params for p in pair]
    if not parts:
        return np.zeros(0, dtype)
    return np.concatenate(parts).astype(dtype, copy=False)


def unflatten(vec, layers, dtype=np.float32):
    """Inverse of :func:`flatten` for the given layer specs."""
    vec = np.asarray(vec)
    total = sum(l.n_params for l in layers)
    if vec.ndim != 1 or vec.size != total:
        raise ValueError(f"vector length {vec.size} does not match parameter count {total}")
    out, start = [], 0
    for l in layers:
        nw = l.n_params - l.out_channels
        w = vec[start:start + nw].reshape(l.weight_shape).astype(dtype, copy=True)
        b = vec[start + nw:start + l.n_params].astype(dtype, copy=True)
        out.append((w, b))
        start += l.n_params
    return out


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, dtype=np.float32, **kw):
        return cls(np.zeros(size, dtype), np.zeros(size, dtype), **kw)


def adam_step(params, grads, state, lr, weight_decay=0.0, segments=None):
    """One Adam update with L2 weight decay folded into the gradient.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    ``segments`` (as from :meth:`ConvNet.segments`) is only used to name the
    offending layer when a gradient is not finite.
    """
    params = np.asarray(params)
    grads = np.asarray(grads, dtype=params.dtype)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("params, grads and optimizer moments must have the same length")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        where = f"index {idx}"
        for label, sl in segments or ():
            if sl.start <= idx < sl.stop:
                where = label
                break
        raise FloatingPointError(f"non-finite gradient in {where}")
    dt = params.dtype.type
    b1, b2 = dt(state.beta1), dt(state.beta2)
    g = grads + dt(weight_decay) * params
    t = state.step_count + 1
    m = b1 * state.first_moment + (1 - b1) * g
    v = b2 * state.second_moment + (1 - b2) * (g * g)
    m_hat = m / dt(1 - state.beta1**t)
    v_hat = v / dt(1 - state.beta2**t)
    new = params - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
    return new, replace(state, first_moment=m, second_moment=v, step_count=t)


def lr_schedule(base_lr, epoch, factor=0.2, every=3):
    """Step decay: ``base_lr * factor ** (epoch // every)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * factor ** (epoch // every)


# -- checkpoint files ----------------------------------------------------------


def _encode_layer(l):
    act = l.activation.encode("ascii")
    return struct.pack("<III", l.kernel, l.in_channels, l.out_channels) + act


def _decode_layer(rec):
    if len(rec) < 12:
        raise ValueError("layer record too short")
    k, cin, cout = struct.unpack_from("<III", rec)
    return LayerSpec(k, cin, cout, rec[12:].decode("ascii"))


def dump_checkpoint(model):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(model.layers)))
    for l in model.layers:
        rec = _encode_layer(l)
        buf.write(struct.pack("<I", len(rec)))
        buf.write(rec)
    buf.write(struct.pack("<I", model.head_boundary))
    buf.write(model.get_flat().astype("<f4").tobytes())
    return buf.getvalue()


def parse_checkpoint(data):
    """Rebuild a float32 :class:`ConvNet` from checkpoint bytes."""
    data = memoryview(data)
    if bytes(data[:4]) != CHECKPOINT_MAGIC:
        raise ValueError("bad magic: not a SALC checkpoint")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"truncated checkpoint: expected at least {pos + n} bytes, got {len(data)}")
        chunk = bytes(data[pos:pos + n])
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(count):
        (size,) = struct.unpack("<I", take(4))
        layers.append(_decode_layer(take(size)))
    (boundary,) = struct.unpack("<I", take(4))
    total = sum(l.n_params for l in layers)
    flat = np.frombuffer(take(4 * total), dtype="<f4").astype(np.float32)
    if pos != len(data):
        raise ValueError(f"trailing bytes in checkpoint: expected {pos}, got {len(data)}")
    return ConvNet(layers, unflatten(flat, layers), head_boundary=boundary)


def save_checkpoint(model, path):
    Path(path).write_bytes(dump_checkpoint(model))


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())
