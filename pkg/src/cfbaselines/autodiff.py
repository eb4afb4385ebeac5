"""Static computation graphs over float32 numpy arrays with reverse-mode autodiff.

A :class:`Graph` is built once by chaining op builders (``g.conv2d(...)``,
``g.leaky_relu(...)``, ...). Nodes are appended in creation order, so the node
list is always a valid topological order. Values are produced by
:func:`forward` and gradients by :func:`backward`; both can be called many
times on the same graph with different feeds.

The leading dimension of an input may be declared as ``None`` to accept any
batch size. Every other dimension is checked at build time and at feed time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

DTYPE = np.float32

Shape = tuple  # dims may contain None in position 0


class ShapeError(ValueError):
    """Raised when a node receives operands of incompatible shapes."""

    def __init__(self, node_id: int, message: str):
        super().__init__(f"node {node_id}: {message}")
        self.node_id = node_id


class UnreachableGradientWarning(UserWarning):
    pass


@dataclass
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...]
    shape: Shape
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str | None = None


# ---------------------------------------------------------------------------
# convolution kernels (plain numpy, no FFT)


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Read-only strided view ``(N, C, Ho, Wo, kh, kw)`` of the (padded) input."""
    if pad:
        n, c, h, w = x.shape
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        padded[:, :, pad:pad + h, pad:pad + w] = x
        x = padded  # np.pad costs ~60 us per call at these sizes
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    return as_strided(x, (n, c, ho, wo, kh, kw), (sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation ``y[n,o] = sum_c x[n,c] * w[o,c]``; weights ``(O, C, kh, kw)``."""
    win = _windows(x, w.shape[2], w.shape[3], stride, pad)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_input(g: np.ndarray, w: np.ndarray, x_shape: Sequence[int], stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of :func:`conv2d_raw` w.r.t. its input (also the transposed-conv forward).

    The output gradient is dilated by ``stride`` and fully correlated with the
    flipped, channel-swapped kernel; rows/cols the forward never read get zero.
    """
    n, c, h, wd = x_shape
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    if stride > 1:
        dil = np.zeros((n, g.shape[1], (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype)
        dil[:, :, ::stride, ::stride] = g
    else:
        dil = g
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    full = conv2d_raw(dil, wf, 1, 0) if kh == 1 and kw == 1 else _full_corr(dil, wf)
    hp, wp = h + 2 * pad, wd + 2 * pad
    gx = np.zeros((n, c, hp, wp), dtype=g.dtype)
    rh, rw = min(full.shape[2], hp), min(full.shape[3], wp)
    gx[:, :, :rh, :rw] = full[:, :, :rh, :rw]
    return gx[:, :, pad:pad + h, pad:pad + wd]


def _full_corr(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    n, c, h, wd = x.shape
    padded = np.zeros((n, c, h + 2 * (kh - 1), wd + 2 * (kw - 1)), dtype=x.dtype)
    padded[:, :, kh - 1:kh - 1 + h, kw - 1:kw - 1 + wd] = x
    return conv2d_raw(padded, w, 1, 0)


def conv2d_grad_weight(x: np.ndarray, g: np.ndarray, w_shape: Sequence[int], stride: int = 1, pad: int = 0) -> np.ndarray:
    win = _windows(x, w_shape[2], w_shape[3], stride, pad)
    ho, wo = g.shape[2], g.shape[3]
    win = win[:, :, :ho, :wo]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _convT_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# op table: kind -> (forward, backward)
#
# forward(vals, attrs) -> (out, ctx)
# backward(g, vals, out, ctx, attrs, needs) -> list of input grads (None where not needed)


def _f_conv2d(v, a):
    x, w, b = v
    y = conv2d_raw(x, w, a["stride"], a["padding"]) + b[None, :, None, None]
    return y, None


def _b_conv2d(g, v, out, ctx, a, needs):
    x, w, _ = v
    s, p = a["stride"], a["padding"]
    return [
        conv2d_grad_input(g, w, x.shape, s, p) if needs[0] else None,
        conv2d_grad_weight(x, g, w.shape, s, p) if needs[1] else None,
        g.sum(axis=(0, 2, 3)) if needs[2] else None,
    ]


def _f_convT(v, a):
    x, w, b = v
    s, p = a["stride"], a["padding"]
    n, _, h, wd = x.shape
    shape = (n, w.shape[1], _convT_out(h, w.shape[2], s, p), _convT_out(wd, w.shape[3], s, p))
    y = conv2d_grad_input(x, w, shape, s, p) + b[None, :, None, None]
    return y, None


def _b_convT(g, v, out, ctx, a, needs):
    x, w, _ = v
    s, p = a["stride"], a["padding"]
    gx = gw = None
    if needs[0]:
        gx = conv2d_raw(g, w, s, p)
    if needs[1]:
        gw = conv2d_grad_weight(g, x, w.shape, s, p)
    return [gx, gw, g.sum(axis=(0, 2, 3)) if needs[2] else None]


def _f_linear(v, a):
    x, w, b = v
    return x @ w.T + b, None


def _b_linear(g, v, out, ctx, a, needs):
    x, w, _ = v
    return [g @ w if needs[0] else None, g.T @ x if needs[1] else None, g.sum(axis=0) if needs[2] else None]


def _f_leaky(v, a):
    x = v[0]
    return np.where(x > 0, x, x * x.dtype.type(a["slope"])), None


def _b_leaky(g, v, out, ctx, a, needs):
    return [np.where(v[0] > 0, g, g * g.dtype.type(a["slope"]))]


def _f_sigmoid(v, a):
    x = v[0]
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype), None


def _b_sigmoid(g, v, out, ctx, a, needs):
    return [g * out * (1 - out)]


def _f_softmax(v, a):
    z = v[0]
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True), None


def _b_softmax(g, v, out, ctx, a, needs):
    return [out * (g - (g * out).sum(axis=-1, keepdims=True))]


def _f_xent(v, a):
    logits, target = v
    logp = _log_softmax(logits)
    weights = a.get("class_weights")
    per = -(target * logp).sum(axis=-1)
    sw = target @ weights if weights is not None else np.ones(len(per), dtype=logits.dtype)
    norm = sw.sum()
    loss = (sw * per).sum() / norm
    return np.asarray(loss, dtype=logits.dtype), (logp, sw, norm)


def _b_xent(g, v, out, ctx, a, needs):
    logits, target = v
    logp, sw, norm = ctx
    p = np.exp(logp)
    tsum = target.sum(axis=-1, keepdims=True)
    gl = (p * tsum - target) * (sw / norm)[:, None] * g
    return [gl, None]


def _f_mse(v, a):
    x, y = v
    d = x - y
    if a["reduction"] == "mean":
        return np.asarray((d * d).mean(), dtype=x.dtype), None
    # sum over every non-batch axis, mean over the batch
    return np.asarray((d * d).sum() / d.shape[0], dtype=x.dtype), None


def _b_mse(g, v, out, ctx, a, needs):
    x, y = v
    d = x - y
    denom = d.size if a["reduction"] == "mean" else d.shape[0]
    gd = (2 * g / denom) * d
    return [gd if needs[0] else None, -gd if needs[1] else None]


def _f_add(v, a):
    return v[0] + v[1], None


def _b_add(g, v, out, ctx, a, needs):
    return [_unbroadcast(g, v[0].shape) if needs[0] else None, _unbroadcast(g, v[1].shape) if needs[1] else None]


def _f_mul(v, a):
    return v[0] * v[1], None


def _b_mul(g, v, out, ctx, a, needs):
    return [
        _unbroadcast(g * v[1], v[0].shape) if needs[0] else None,
        _unbroadcast(g * v[0], v[1].shape) if needs[1] else None,
    ]


def _f_scale(v, a):
    return v[0] * v[0].dtype.type(a["c"]), None


def _b_scale(g, v, out, ctx, a, needs):
    return [g * g.dtype.type(a["c"])]


def _f_exp(v, a):
    return np.exp(v[0]), None


def _b_exp(g, v, out, ctx, a, needs):
    return [g * out]


def _f_sum(v, a):
    return np.asarray(v[0].sum(axis=a["axes"]), dtype=v[0].dtype), None


def _expand(g, x_shape, axes):
    if axes is None:
        return np.broadcast_to(g, x_shape)
    axes = tuple(ax % len(x_shape) for ax in axes)
    return np.broadcast_to(np.expand_dims(g, axes), x_shape)


def _b_sum(g, v, out, ctx, a, needs):
    return [np.array(_expand(g, v[0].shape, a["axes"]))]


def _f_mean(v, a):
    return np.asarray(v[0].mean(axis=a["axes"]), dtype=v[0].dtype), None


def _b_mean(g, v, out, ctx, a, needs):
    x = v[0]
    axes = a["axes"]
    count = x.size if axes is None else int(np.prod([x.shape[ax] for ax in axes]))
    return [np.array(_expand(g, x.shape, axes)) / x.dtype.type(count)]


def _f_kl(v, a):
    mu, logvar = v
    kl = -0.5 * (1 + logvar - mu * mu - np.exp(logvar))
    return np.asarray(kl.sum() / mu.shape[0], dtype=mu.dtype), None


def _b_kl(g, v, out, ctx, a, needs):
    mu, logvar = v
    n = mu.shape[0]
    return [
        g * mu / n if needs[0] else None,
        g * 0.5 * (np.exp(logvar) - 1) / n if needs[1] else None,
    ]


def _f_reshape(v, a):
    x = v[0]
    return x.reshape((x.shape[0],) + tuple(a["new_shape"])), None


def _b_reshape(g, v, out, ctx, a, needs):
    return [g.reshape(v[0].shape)]


OPS: dict[str, tuple[Callable, Callable]] = {
    "conv2d": (_f_conv2d, _b_conv2d),
    "conv_transpose2d": (_f_convT, _b_convT),
    "linear": (_f_linear, _b_linear),
    "leaky_relu": (_f_leaky, _b_leaky),
    "sigmoid": (_f_sigmoid, _b_sigmoid),
    "softmax": (_f_softmax, _b_softmax),
    "cross_entropy": (_f_xent, _b_xent),
    "mse": (_f_mse, _b_mse),
    "add": (_f_add, _b_add),
    "mul": (_f_mul, _b_mul),
    "scale": (_f_scale, _b_scale),
    "exp": (_f_exp, _b_exp),
    "sum": (_f_sum, _b_sum),
    "mean": (_f_mean, _b_mean),
    "gaussian_kl": (_f_kl, _b_kl),
    "reshape": (_f_reshape, _b_reshape),
}

# kinds whose value is supplied rather than computed
LEAF_KINDS = ("input", "param", "const")


def _dims_match(declared: Shape, actual: Sequence[int]) -> bool:
    if len(declared) != len(actual):
        return False
    return all(d is None or d == a for d, a in zip(declared, actual))


def _broadcast_shape(node_id: int, a: Shape, b: Shape) -> Shape:
    if len(a) != len(b):
        raise ShapeError(node_id, f"rank mismatch {a} vs {b}")
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(node_id, f"cannot broadcast {a} with {b}")
    return tuple(out)


class Graph:
    """A DAG of tensor operations, built eagerly and evaluated on demand.

    Parameters are looked up by name in ``params`` (a plain dict shared with the
    owning model), so in-place optimizer updates are visible on the next
    forward pass.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None, dtype=DTYPE):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = params if params is not None else {}
        self.outputs: dict[str, int] = {}
        self.values: list[np.ndarray | None] = []
        self.grads: dict[int, np.ndarray] = {}
        self._names: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    def _add(self, kind: str, inputs: Iterable[int], shape: Shape, name: str | None = None, **attrs) -> int:
        nid = len(self.nodes)
        if name is not None:
            if name in self._names:
                raise ValueError(f"duplicate node name {name!r}")
            self._names[name] = nid
        self.nodes.append(Node(nid, kind, tuple(inputs), tuple(shape), attrs, name))
        self.values.append(None)
        return nid

    def shape(self, node: int) -> Shape:
        return self.nodes[node].shape

    def node_id(self, ref: int | str) -> int:
        if isinstance(ref, str):
            if ref in self._names:
                return self._names[ref]
            if ref in self.outputs:
                return self.outputs[ref]
            raise KeyError(f"no node named {ref!r}")
        return int(ref)

    def input(self, name: str, shape: Shape) -> int:
        return self._add("input", (), shape, name=name)

    def param(self, name: str, array: np.ndarray | None = None) -> int:
        """Declare a parameter node; ``array`` (if given) is stored in ``params``."""
        if array is not None:
            self.params[name] = np.asarray(array, dtype=self.dtype)
        return self._add("param", (), self.params[name].shape, name=name)

    def const(self, array: np.ndarray, name: str | None = None) -> int:
        arr = np.asarray(array, dtype=self.dtype)
        return self._add("const", (), arr.shape, name=name, value=arr)

    def output(self, name: str, node: int) -> int:
        self.outputs[name] = node
        return node

    def conv2d(self, x: int, w: int, b: int, stride: int = 1, padding: int = 0) -> int:
        nid = len(self.nodes)
        xs, ws, bs = self.shape(x), self.shape(w), self.shape(b)
        if len(xs) != 4 or len(ws) != 4 or xs[1] != ws[1] or bs != (ws[0],):
            raise ShapeError(nid, f"conv2d got x{xs} w{ws} b{bs}")
        out = (xs[0], ws[0], _conv_out(xs[2], ws[2], stride, padding), _conv_out(xs[3], ws[3], stride, padding))
        return self._add("conv2d", (x, w, b), out, stride=stride, padding=padding)

    def conv_transpose2d(self, x: int, w: int, b: int, stride: int = 1, padding: int = 0) -> int:
        nid = len(self.nodes)
        xs, ws, bs = self.shape(x), self.shape(w), self.shape(b)
        if len(xs) != 4 or len(ws) != 4 or xs[1] != ws[0] or bs != (ws[1],):
            raise ShapeError(nid, f"conv_transpose2d got x{xs} w{ws} b{bs}")
        out = (xs[0], ws[1], _convT_out(xs[2], ws[2], stride, padding), _convT_out(xs[3], ws[3], stride, padding))
        # the adjoint conv must map the output back onto exactly xs
        if _conv_out(out[2], ws[2], stride, padding) != xs[2] or _conv_out(out[3], ws[3], stride, padding) != xs[3]:
            raise ShapeError(nid, "transposed conv geometry is not invertible")
        return self._add("conv_transpose2d", (x, w, b), out, stride=stride, padding=padding)

    def linear(self, x: int, w: int, b: int) -> int:
        nid = len(self.nodes)
        xs, ws, bs = self.shape(x), self.shape(w), self.shape(b)
        if len(xs) != 2 or len(ws) != 2 or xs[1] != ws[1] or bs != (ws[0],):
            raise ShapeError(nid, f"linear got x{xs} w{ws} b{bs}")
        return self._add("linear", (x, w, b), (xs[0], ws[0]))

    def leaky_relu(self, x: int, slope: float = 0.01) -> int:
        return self._add("leaky_relu", (x,), self.shape(x), slope=slope)

    def sigmoid(self, x: int) -> int:
        return self._add("sigmoid", (x,), self.shape(x))

    def softmax(self, x: int) -> int:
        return self._add("softmax", (x,), self.shape(x))

    def exp(self, x: int) -> int:
        return self._add("exp", (x,), self.shape(x))

    def cross_entropy(self, logits: int, target: int, class_weights: Sequence[float] | None = None) -> int:
        """Mean (optionally class-weighted) cross entropy of logits against one-hot/soft targets."""
        nid = len(self.nodes)
        ls, ts = self.shape(logits), self.shape(target)
        if len(ls) != 2 or not _dims_match(ls, ts) and not _dims_match(ts, ls):
            raise ShapeError(nid, f"cross_entropy got logits{ls} target{ts}")
        cw = None if class_weights is None else np.asarray(class_weights, dtype=self.dtype)
        if cw is not None and cw.shape != (ls[1],):
            raise ShapeError(nid, f"class_weights must have shape ({ls[1]},)")
        return self._add("cross_entropy", (logits, target), (), class_weights=cw)

    def mse(self, x: int, y: int, reduction: str = "mean") -> int:
        nid = len(self.nodes)
        if reduction not in ("mean", "batch"):
            raise ValueError("reduction must be 'mean' or 'batch'")
        xs, ys = self.shape(x), self.shape(y)
        if not (_dims_match(xs, ys) or _dims_match(ys, xs)):
            raise ShapeError(nid, f"mse got {xs} and {ys}")
        return self._add("mse", (x, y), (), reduction=reduction)

    def add(self, x: int, y: int) -> int:
        nid = len(self.nodes)
        return self._add("add", (x, y), _broadcast_shape(nid, self.shape(x), self.shape(y)))

    def mul(self, x: int, y: int) -> int:
        nid = len(self.nodes)
        return self._add("mul", (x, y), _broadcast_shape(nid, self.shape(x), self.shape(y)))

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), self.shape(x), c=float(c))

    def sum(self, x: int, axes: tuple[int, ...] | None = None) -> int:
        return self._add("sum", (x,), _reduced(self.shape(x), axes), axes=axes)

    def mean(self, x: int, axes: tuple[int, ...] | None = None) -> int:
        return self._add("mean", (x,), _reduced(self.shape(x), axes), axes=axes)

    def gaussian_kl(self, mu: int, logvar: int) -> int:
        """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, averaged over the batch."""
        nid = len(self.nodes)
        if not _dims_match(self.shape(mu), self.shape(logvar)):
            raise ShapeError(nid, f"gaussian_kl got {self.shape(mu)} and {self.shape(logvar)}")
        return self._add("gaussian_kl", (mu, logvar), ())

    def reshape(self, x: int, shape: Sequence[int]) -> int:
        nid = len(self.nodes)
        xs = self.shape(x)
        if int(np.prod(xs[1:])) != int(np.prod(shape)):
            raise ShapeError(nid, f"cannot reshape {xs} to (batch, {tuple(shape)})")
        return self._add("reshape", (x,), (xs[0],) + tuple(shape), new_shape=tuple(shape))

    # -- evaluation -------------------------------------------------------

    def forward(self, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        vals = self.values
        for node in self.nodes:
            if node.kind == "input":
                if node.name not in inputs:
                    raise KeyError(f"missing input {node.name!r}")
                arr = np.asarray(inputs[node.name], dtype=self.dtype)
                if not _dims_match(node.shape, arr.shape):
                    raise ShapeError(node.id, f"input {node.name!r} expects {node.shape}, got {arr.shape}")
                vals[node.id] = arr
            elif node.kind == "param":
                vals[node.id] = self.params[node.name]
            elif node.kind == "const":
                vals[node.id] = node.attrs["value"]
            else:
                fwd = OPS[node.kind][0]
                try:
                    out, ctx = fwd([vals[i] for i in node.inputs], node.attrs)
                except ValueError as exc:
                    raise ShapeError(node.id, str(exc)) from exc
                vals[node.id] = out.astype(self.dtype, copy=False)
                node.attrs["_ctx"] = ctx
        self.grads = {}
        return {name: vals[nid] for name, nid in self.outputs.items()}

    def backward(self, output: int | str, wrt: Iterable[int | str]) -> dict[int | str, np.ndarray]:
        out_id = self.node_id(output)
        if self.values[out_id] is None:
            raise RuntimeError("forward must run before backward")
        if np.asarray(self.values[out_id]).size != 1:
            raise ShapeError(out_id, "backward requires a scalar output")
        wrt = list(wrt)
        wrt_ids = [self.node_id(r) for r in wrt]

        # nodes that depend on any requested node
        needs = [False] * len(self.nodes)
        targets = set(wrt_ids)
        for node in self.nodes:
            needs[node.id] = node.id in targets or any(needs[i] for i in node.inputs)
        # nodes that feed the output
        feeds = [False] * len(self.nodes)
        feeds[out_id] = True
        for node in reversed(self.nodes[: out_id + 1]):
            if feeds[node.id]:
                for i in node.inputs:
                    feeds[i] = True

        grads: dict[int, np.ndarray] = {out_id: np.ones_like(self.values[out_id])}
        for node in reversed(self.nodes[: out_id + 1]):
            g = grads.get(node.id)
            if g is None or node.kind in LEAF_KINDS or not needs[node.id]:
                continue
            in_vals = [self.values[i] for i in node.inputs]
            in_needs = [needs[i] and feeds[i] for i in node.inputs]
            bwd = OPS[node.kind][1]
            in_grads = bwd(g, in_vals, self.values[node.id], node.attrs.get("_ctx"), node.attrs, in_needs)
            for i, gi, need in zip(node.inputs, in_grads, in_needs):
                if not need or gi is None:
                    continue
                gi = np.asarray(gi, dtype=self.dtype)
                grads[i] = grads[i] + gi if i in grads else gi
        self.grads = grads

        result: dict[int | str, np.ndarray] = {}
        for ref, nid in zip(wrt, wrt_ids):
            if nid in grads:
                result[ref] = grads[nid]
            else:
                warnings.warn(f"node {nid} does not reach the output; returning zeros", UnreachableGradientWarning, stacklevel=2)
                result[ref] = np.zeros_like(self.values[nid])
        return result


def _reduced(shape: Shape, axes: tuple[int, ...] | None) -> Shape:
    if axes is None:
        return ()
    axes = {ax % len(shape) for ax in axes}
    return tuple(d for i, d in enumerate(shape) if i not in axes)


def forward(graph: Graph, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate every node of ``graph`` and return the named outputs."""
    return graph.forward(inputs)


def backward(graph: Graph, output: int | str, wrt: Iterable[int | str]) -> dict[int | str, np.ndarray]:
    """Gradients of the scalar ``output`` with respect to each node in ``wrt``."""
    return graph.backward(output, wrt)
