"""A small reverse-mode autodiff core on numpy float64 arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  :meth:`Tensor.backward`
walks that record in reverse topological order.  Ops whose inputs need no
gradient record nothing, so inference does not build a graph.

Batch layout for feature maps is ``(B, C, T, V)``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from heatgait.errors import CheckpointError, NonFinite, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor upstream of ``self``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward", f"implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NonFinite(op)


def _result(op, data, parents, backward):
    _check_finite(op, data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", f"cannot broadcast {a.shape} with {b.shape}") from None
    return _result("add", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("permute", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _result("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _result("mean", np.asarray(x.data.mean()), (x,),
                   lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", f"inner axes disagree: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _result("matmul", out, (a, b), backward)


def einsum_vertex_mix(adj, x) -> Tensor:
    """``out[b, c, t, w] = sum_v adj[w, v] * x[b, c, t, v]``."""
    adj, x = as_tensor(adj), as_tensor(x)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or x.shape[-1] != adj.shape[1]:
        raise ShapeMismatch("einsum_vertex_mix", f"adjacency {adj.shape} vs vertex axis of {x.shape}")
    out = np.matmul(x.data, adj.data.T)

    def backward(g):
        gadj = None
        if adj.requires_grad:
            m = adj.shape[0]
            gadj = g.reshape(-1, m).T @ x.data.reshape(-1, m)
        gx = np.matmul(g, adj.data) if x.requires_grad else None
        return gadj, gx

    return _result("einsum_vertex_mix", out, (adj, x), backward)


def channel_mix(x, w) -> Tensor:
    """Map channels of a ``(B, C, T, V)`` map through a ``(C, C')`` matrix.

    This is ``X @ theta`` with the channel axis as the feature axis.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch("channel_mix", f"input {x.shape} vs weight {w.shape}")
    b, c, t, v = x.shape
    xf = np.ascontiguousarray(x.data).reshape(b, c, t * v)
    out = np.matmul(w.data.T, xf).reshape(b, w.shape[1], t, v)

    def backward(g):
        gf = g.reshape(b, w.shape[1], t * v)
        gx = np.matmul(w.data, gf).reshape(x.shape) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.einsum("bcn,bon->co", xf, gf, optimize=True)
        return gx, gw

    return _result("channel_mix", out, (x, w), backward)


def linear(x, w, bias=None) -> Tensor:
    """``x @ w + bias`` for ``x`` of shape ``(B, C)`` and ``w`` of shape ``(C, D)``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch("linear", f"input {x.shape} vs weight {w.shape}")
    out = matmul(x, w)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (w.shape[1],):
            raise ShapeMismatch("linear", f"bias {bias.shape} vs output width {w.shape[1]}")
        out = add(out, bias)
    return out


# -- convolution / normalisation / pooling --------------------------------------

def temporal_conv(x, w, stride: int = 1) -> Tensor:
    """Convolution along time with a ``(C', C, t, 1)`` kernel, zero padding ``(t-1)/2``.

    Output length is ``ceil(T / stride)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch("temporal_conv", f"expected 4-d input and kernel, got {x.shape}, {w.shape}")
    c_out, c_in, t, one = w.shape
    if one != 1 or c_in != x.shape[1]:
        raise ShapeMismatch("temporal_conv", f"kernel {w.shape} vs input channels {x.shape[1]}")
    if t % 2 != 1:
        raise ShapeMismatch("temporal_conv", f"temporal kernel size {t} must be odd")
    b, _, T, v = x.shape
    pad = (t - 1) // 2
    t_out = -(-T // stride)
    span = stride * (t_out - 1) + 1
    # channels-last im2col buffer (B, T_out, V, t, C), reused by backward
    xcl = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    xp = np.pad(xcl, ((0, 0), (pad, pad), (0, 0), (0, 0))) if pad else xcl
    cols = np.empty((b, t_out, v, t, c_in))
    for k in range(t):
        cols[:, :, :, k, :] = xp[:, k:k + span:stride]
    cols2 = cols.reshape(-1, t * c_in)
    wmat = np.ascontiguousarray(w.data[..., 0].transpose(0, 2, 1)).reshape(c_out, t * c_in)
    out = np.ascontiguousarray((cols2 @ wmat.T).reshape(b, t_out, v, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        gw = gx = None
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        if w.requires_grad:
            gw = (g2.T @ cols2).reshape(c_out, t, c_in).transpose(0, 2, 1)[..., None]
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(b, t_out, v, t, c_in)
            gxp = np.zeros_like(xp)
            for k in range(t):
                gxp[:, k:k + span:stride] += gcols[:, :, :, k, :]
            gx = np.ascontiguousarray(gxp[:, pad:pad + T].transpose(0, 3, 1, 2))
        return gx, gw

    return _result("temporal_conv", out, (x, w), backward)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1):
        return cls(np.zeros(channels), np.ones(channels), momentum)


BN_EPS = 1e-5


def batch_norm(x, gamma, beta, stats: RunningStats | None, mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation over every axis except 1.

    ``train`` uses batch statistics and updates ``stats`` in place;
    ``eval`` uses ``stats`` as-is.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch("batch_norm", f"affine params {gamma.shape}/{beta.shape} vs {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if stats is not None:
            n = x.data.size // c
            unbiased = var * n / max(n - 1, 1)
            stats.mean = (1 - stats.momentum) * stats.mean + stats.momentum * mu
            stats.var = (1 - stats.momentum) * stats.var + stats.momentum * unbiased
    elif mode == "eval":
        if stats is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        mu, var = stats.mean, stats.var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if mode == "train":
            m = x.data.size // c
            gx = (inv_std.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return _result("batch_norm", out, (x, gamma, beta), backward)


def global_avg_pool(x) -> Tensor:
    """Mean over time and vertices: ``(B, C, T, V) -> (B, C)``."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatch("global_avg_pool", f"expected (B, C, T, V), got {x.shape}")
    n = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))
    return _result("global_avg_pool", out, (x,),
                   lambda g: (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),))


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Scale each row of ``(B, D)`` to unit Euclidean norm."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeMismatch("l2_normalize", f"expected (B, D), got {x.shape}")
    norm = np.sqrt((x.data ** 2).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _result("l2_normalize", y, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch("softmax_cross_entropy", f"logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = logits.shape[0]
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _result("softmax_cross_entropy", np.asarray(loss), (logits,), backward)


# -- parameters and optimiser -----------------------------------------------------

class ParamStore(dict):
    """Ordered ``name -> Tensor`` map of learnable parameters."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.values()))

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.items()}

    def check_finite(self):
        for name, p in self.items():
            if not np.isfinite(p.data).all():
                raise NonFinite(f"parameter {name}")


@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, for every parameter with a gradient."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if not np.isfinite(g).all():
            raise NonFinite(f"gradient of {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


# -- checkpoint file ----------------------------------------------------------------

MAGIC = b"HEATGCKP"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named float64 arrays after a JSON header.

    Layout: magic (8 bytes), version (uint32 LE), header length (uint64 LE),
    UTF-8 JSON header, then each array as raw little-endian float64 in
    header order.
    """
    entries = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=DTYPE)
        entries.append({"name": name, "shape": list(arr.shape)})
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
    buf.write(header)
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_arrays(path) -> tuple[dict, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    head = len(MAGIC) + 12
    if len(raw) < head or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[head:head + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    offset = head + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).astype(DTYPE).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header["meta"]
