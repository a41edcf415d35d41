"""Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a numpy float array plus an optional gradient and a
`trainable` flag. Operations build an acyclic compute graph; `backward`
walks it once in reverse topological order. Gradients are only ever
materialised on trainable leaves -- frozen tensors keep `grad = None`
no matter what graph they participate in, and subgraphs that cannot
reach a trainable leaf are skipped entirely.

Float32 is the working precision for models; the same ops run in
float64 when handed float64 arrays (used by the finite-difference
checks in the test suite).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GraphError, NonFiniteInput, ShapeMismatch


class Tensor:
    """N-dimensional float array node in the compute graph."""

    __slots__ = ("data", "grad", "trainable", "requires_grad", "name", "op",
                 "_inputs", "_vjp")

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.requires_grad = trainable
        self.name = name
        self.op = "leaf"
        self._inputs: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "train" if self.trainable else "fixed"
        return f"Tensor(name={self.name!r}, shape={self.data.shape}, {tag}, op={self.op!r})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make_node(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = inputs
        out._vjp = vjp
    return out


def _check_finite(op: str, arr: np.ndarray, allow_neginf: bool = False):
    if allow_neginf:
        bad = np.isnan(arr).any() or (arr == np.inf).any()
    else:
        # a single reduction: NaN and +-inf both poison the sum (values at
        # toy scale can never overflow a finite float sum)
        bad = not np.isfinite(arr.sum())
    if bad:
        raise NonFiniteInput(op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite("add", a.data, allow_neginf=True)
    _check_finite("add", b.data, allow_neginf=True)
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make_node("add", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite("mul", a.data)
    _check_finite("mul", b.data)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make_node("mul", out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch("matmul", f"{a.data.shape} @ {b.data.shape}")
    _check_finite("matmul", a.data)
    _check_finite("matmul", b.data)
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _make_node("matmul", out, (a, b), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)
    in_shape = x.data.shape

    def vjp(g):
        return (g.reshape(in_shape),)

    return _make_node("reshape", out, (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make_node("transpose", out, (x,), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make_node("concat", out, tuple(parts), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    out = x.data[start:stop]
    full = x.data.shape

    def vjp(g):
        gx = np.zeros(full, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return _make_node("slice", out, (x,), vjp)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    _check_finite("sum", x.data)
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    shape = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _make_node("sum", out, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = _as_tensor(x)
    _check_finite("gelu", x.data)
    d = x.data
    c = np.asarray(math.sqrt(2.0 / math.pi), dtype=d.dtype)
    k = np.asarray(0.044715, dtype=d.dtype)
    inner = c * (d + k * d**3)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def vjp(g):
        dt = (1.0 - t**2) * c * (1.0 + 3.0 * k * d**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)

    return _make_node("gelu", out, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; tolerates -inf entries (additive masks)."""
    x = _as_tensor(x)
    _check_finite("softmax", x.data, allow_neginf=True)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        s = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - s),)

    return _make_node("softmax", out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.data.shape != x.data.shape[-1:] or beta.data.shape != x.data.shape[-1:]:
        raise ShapeMismatch(
            "layer_norm", f"x {x.data.shape}, gamma {gamma.data.shape}, beta {beta.data.shape}")
    _check_finite("layer_norm", x.data)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    var = d.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=d.dtype))
    xhat = (d - mu) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        ggamma = (g * xhat).reshape(-1, d.shape[-1]).sum(axis=0)
        gbeta = g.reshape(-1, d.shape[-1]).sum(axis=0)
        return (gx, ggamma, gbeta)

    return _make_node("layer_norm", out, (x, gamma, beta), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b), with w laid out [d_in, d_out]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeMismatch("linear", f"x {x.data.shape} vs w {w.data.shape}")
    y = matmul(x, w)
    y.op = "linear"
    if b is not None:
        y = add(y, b)
        y.op = "linear"
    return y


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """1-D convolution over time: x [C_in, T], w [C_out, C_in, K] -> [C_out, T_out].

    T_out = floor((T + 2*padding - K) / stride) + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeMismatch("conv1d", f"x {x.data.shape}, w {w.data.shape}")
    c_in, t_in = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise ShapeMismatch("conv1d", f"input channels {c_in} vs weight {c_in_w}")
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatch("conv1d", f"T={t_in}, kernel={k}, stride={stride}, pad={padding}")
    _check_finite("conv1d", x.data)
    _check_finite("conv1d", w.data)

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    out = np.zeros((c_out, t_out), dtype=x.data.dtype)
    for kk in range(k):
        seg = xp[:, kk:kk + stride * (t_out - 1) + 1:stride]
        out += w.data[:, :, kk] @ seg

    inputs: list[Tensor] = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (c_out,):
            raise ShapeMismatch("conv1d", f"bias {b.data.shape} vs C_out {c_out}")
        _check_finite("conv1d", b.data)
        out = out + b.data[:, None]
        inputs.append(b)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for kk in range(k):
            sl = slice(kk, kk + stride * (t_out - 1) + 1, stride)
            gw[:, :, kk] = g @ xp[:, sl].T
            gxp[:, sl] += w.data[:, :, kk].T @ g
        gx = gxp[:, padding:padding + t_in] if padding else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=1))
        return tuple(grads)

    return _make_node("conv1d", out, tuple(inputs), vjp)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer ids."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.data.shape[0]:
        raise ShapeMismatch(
            "embedding_lookup", f"ids outside [0, {table.data.shape[0]})")
    out = table.data[ids]
    vocab_shape = table.data.shape

    def vjp(g):
        gt = np.zeros(vocab_shape, dtype=g.dtype)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make_node("embedding_lookup", out, (table,), vjp)


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """Additive mask: 0 on/below the diagonal, -inf strictly above."""
    m = np.zeros((t, t), dtype=dtype)
    m[np.triu_indices(t, k=1)] = -np.inf
    return m


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                        causal: bool = False) -> Tensor:
    """Scaled dot-product attention over already-projected q/k/v of shape [T, d]."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    t, d = q.data.shape
    if k.data.shape != (t, d) or v.data.shape != (t, d):
        raise ShapeMismatch(
            "multihead_attention", f"q {q.data.shape}, k {k.data.shape}, v {v.data.shape}")
    if d % n_heads != 0:
        raise ShapeMismatch("multihead_attention", f"dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(x):
        return transpose(reshape(x, (t, n_heads, dh)), (1, 0, 2))

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, transpose(kh, (0, 2, 1)))
    scores = mul(scores, np.asarray(1.0 / math.sqrt(dh), dtype=q.data.dtype))
    if causal:
        scores = add(scores, causal_mask(t, dtype=q.data.dtype))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)
    out = reshape(transpose(ctx, (1, 0, 2)), (t, d))
    out.op = "multihead_attention"
    return out


def cross_entropy(logits: Tensor, targets, ignore_mask=None,
                  reduction: str = "mean") -> Tensor:
    """Token-level cross entropy with an optional keep-mask.

    `ignore_mask` is a boolean array over positions; False positions
    contribute zero loss and zero gradient. `reduction` is "mean"
    (over kept positions) or "sum".
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeMismatch(
            "cross_entropy", f"logits {logits.data.shape} vs targets {targets.shape}")
    _check_finite("cross_entropy", logits.data)
    t, vocab = logits.data.shape
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ShapeMismatch("cross_entropy", f"target ids outside [0, {vocab})")
    keep = np.ones(t, dtype=bool) if ignore_mask is None else np.asarray(ignore_mask, dtype=bool)
    if keep.shape != (t,):
        raise ShapeMismatch("cross_entropy", f"mask {keep.shape} vs positions {t}")

    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[:, 0]
    nll = lse - logits.data[np.arange(t), targets]
    n_keep = int(keep.sum())
    denom = max(1, n_keep) if reduction == "mean" else 1
    out = np.asarray((nll * keep).sum() / denom, dtype=logits.data.dtype)

    def vjp(g):
        p = np.exp(logits.data - m) / np.exp(z).sum(axis=-1, keepdims=True)
        p[np.arange(t), targets] -= 1.0
        p *= (keep / denom)[:, None]
        return (p * g,)

    node = _make_node("cross_entropy", out, (logits,), vjp)
    return node


_PRIMITIVES = {
    "conv1d": lambda inputs, attrs: conv1d(inputs[0], inputs[1],
                                           inputs[2] if len(inputs) > 2 else None,
                                           stride=attrs.get("stride", 1),
                                           padding=attrs.get("padding", 0)),
    "linear": lambda inputs, attrs: linear(*inputs),
    "layer_norm": lambda inputs, attrs: layer_norm(*inputs, eps=attrs.get("eps", 1e-5)),
    "gelu": lambda inputs, attrs: gelu(inputs[0]),
    "softmax": lambda inputs, attrs: softmax(inputs[0], axis=attrs.get("axis", -1)),
    "embedding_lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["ids"]),
    "multihead_attention": lambda inputs, attrs: multihead_attention(
        inputs[0], inputs[1], inputs[2], n_heads=attrs["n_heads"],
        causal=attrs.get("causal", False)),
    "cross_entropy": lambda inputs, attrs: cross_entropy(
        inputs[0], attrs["targets"], attrs.get("ignore_mask"),
        attrs.get("reduction", "mean")),
}


def forward_primitive(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Uniform dispatch over the substrate's layer primitives."""
    if kind not in _PRIMITIVES:
        raise KeyError(f"unknown primitive {kind!r}")
    return _PRIMITIVES[kind](list(inputs), attrs or {})


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate gradients of every trainable tensor reachable from `loss`.

    Accumulates into existing `.grad` arrays, so calling backward on
    several losses sums their gradients. A graph with no trainable
    leaves is a no-op (no gradient allocations at all).
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data)
    }
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._inputs, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                pg = pg.astype(parent.data.dtype, copy=False)
                if id(parent) in grads:
                    grads[id(parent)] += pg
                else:
                    # copy if pg aliases g or is a view, so later += stays local
                    owns = pg is not g and pg.base is None
                    grads[id(parent)] = pg if owns else pg.copy()
        if node.trainable:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
