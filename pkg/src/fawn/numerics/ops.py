"""Differentiable operations.

Layer ops accept either a single example or a leading batch axis:
``conv2d``/``maxpool2d`` take ``C x H x W`` or ``N x C x H x W``, ``linear``
acts on the last axis, losses return one value per example.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .graph import Graph, ShapeError, Var


def as_var(graph: Graph, x) -> Var:
    if isinstance(x, Var):
        if x.graph is not graph:
            raise ValueError("operands live on different graphs")
        return x
    return graph.constant(x)


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Var):
            return x.graph
    raise TypeError("at least one operand must be a Var")


# --- elementwise and structural ---------------------------------------------


def add(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = as_var(g, a), as_var(g, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return g.push("add", (a, b), a.value + b.value, lambda gr: (gr, gr))


def mul(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = as_var(g, a), as_var(g, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return g.push("mul", (a, b), av * bv, lambda gr: (gr * bv, gr * av))


def scale(x: Var, c: float) -> Var:
    return x.graph.push("scale", (x,), x.value * c, lambda gr: (gr * c,))


def sum_all(x: Var) -> Var:
    shape = x.shape
    return x.graph.push("sum", (x,), np.array(x.value.sum()), lambda gr: (np.broadcast_to(gr, shape).copy(),))


def mean_all(x: Var) -> Var:
    return scale(sum_all(x), 1.0 / x.value.size)


def reshape(x: Var, shape: Sequence[int]) -> Var:
    old = x.shape
    return x.graph.push("reshape", (x,), x.value.reshape(shape), lambda gr: (gr.reshape(old),))


def flatten(x: Var, batched: bool = False) -> Var:
    """Flatten to a vector, or to ``N x rest`` when ``batched``."""
    if batched:
        return reshape(x, (x.shape[0], -1))
    return reshape(x, (-1,))


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    g = _graph_of(*xs)
    xs = [as_var(g, x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([x.value for x in xs], axis=axis)
    n = len(xs)
    return g.push("stack", xs, out, lambda gr: tuple(np.take(gr, i, axis=axis) for i in range(n)))


def swap_last(x: Var) -> Var:
    return x.graph.push("transpose", (x,), np.swapaxes(x.value, -1, -2), lambda gr: (np.swapaxes(gr, -1, -2),))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def matmul(a, b) -> Var:
    """``a @ b`` with numpy batching; a lower-rank operand is shared across the batch."""
    g = _graph_of(a, b)
    a, b = as_var(g, a), as_var(g, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul expects operands of rank >= 2")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")

    def vjp(gr):
        ga = gr @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ gr
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return g.push("matmul", (a, b), av @ bv, vjp)


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.graph.push("relu", (x,), np.where(mask, x.value, 0.0), lambda gr: (gr * mask,))


# --- layers -----------------------------------------------------------------


def linear(x: Var, weight: Var, bias: Var | None = None) -> Var:
    """``weight @ x + bias`` over the last axis of ``x``."""
    g = x.graph
    w = weight.value
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {w.shape}")
    xv = x.value
    out = xv @ w.T
    if bias is not None:
        out = out + bias.value

    def vjp(gr):
        g2 = gr.reshape(-1, w.shape[0])
        x2 = xv.reshape(-1, w.shape[1])
        grads = [gr @ w, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return g.push("linear", inputs, out, vjp)


def _batched4(v: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    if v.ndim == 3:
        return v[None], True
    if v.ndim == 4:
        return v, False
    raise ShapeError(f"{what}: expected C x H x W or N x C x H x W, got {v.shape}")


def _im2col(xv: np.ndarray) -> np.ndarray:
    """N x C x H x W -> (N*H*W) x (9*C) patches of the zero-padded input, columns ordered (i, j, c)."""
    n, c, h, w = xv.shape
    xp = np.zeros((n, h + 2, w + 2, c))
    xp[:, 1:-1, 1:-1, :] = xv.transpose(0, 2, 3, 1)
    cols = np.empty((n, h, w, 3, 3, c))
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i : i + h, j : j + w, :]
    return cols.reshape(n * h * w, 9 * c)


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    d = dcols.reshape(n, h, w, 3, 3, c)
    gp = np.zeros((n, h + 2, w + 2, c))
    for i in range(3):
        for j in range(3):
            gp[:, i : i + h, j : j + w, :] += d[:, :, :, i, j, :]
    return gp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2)


def conv2d(x: Var, weight: Var, bias: Var) -> Var:
    """3x3 cross-correlation, stride 1, zero padding 1 (output keeps H x W)."""
    g = x.graph
    xv, single = _batched4(x.value, "conv2d")
    w, b = weight.value, bias.value
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: weight must be C_out x C_in x 3 x 3, got {w.shape}")
    if w.shape[1] != xv.shape[1]:
        raise ShapeError(f"conv2d: input has {xv.shape[1]} channels, weight expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} filters")

    n, _, h, wd = xv.shape
    o = w.shape[0]
    cols = _im2col(xv)
    wmat = w.transpose(0, 2, 3, 1).reshape(o, -1)
    out = (cols @ wmat.T + b).reshape(n, h, wd, o).transpose(0, 3, 1, 2)
    if single:
        out = out[0]
    input_is_const = x.node.op == "const"

    def vjp(gr):
        gr4 = gr[None] if single else gr
        gflat = gr4.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gflat.T @ cols).reshape(o, 3, 3, w.shape[1]).transpose(0, 3, 1, 2)
        gb = gflat.sum(axis=0)
        if input_is_const:
            return None, gw, gb
        gx = _col2im(gflat @ wmat, xv.shape)
        return (gx[0] if single else gx), gw, gb

    return g.push("conv2d", (x, weight, bias), np.ascontiguousarray(out), vjp)


def maxpool2d(x: Var, window: tuple[int, int]) -> Var:
    """Non-overlapping max pooling; incomplete trailing windows are dropped."""
    ph, pw = window
    xv, single = _batched4(x.value, "maxpool2d")
    n, c, h, w = xv.shape
    if ph < 1 or pw < 1 or ph > h or pw > w:
        raise ShapeError(f"maxpool2d: window {window} does not fit input {h}x{w}")
    ho, wo = h // ph, w // pw
    blocks = xv[:, :, : ho * ph, : wo * pw].reshape(n, c, ho, ph, wo, pw)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
    arg = blocks.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    def vjp(gr):
        gr4 = gr[None] if single else gr
        gb = np.zeros((n, c, ho, wo, ph * pw))
        np.put_along_axis(gb, arg[..., None], gr4[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * ph, wo * pw)
        gx = np.zeros((n, c, h, w))
        gx[:, :, : ho * ph, : wo * pw] = gb
        return (gx[0] if single else gx,)

    return x.graph.push("maxpool2d", (x,), out, vjp, meta={"window": (ph, pw)})


# --- normalisation and losses ------------------------------------------------


def softmax_array(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_array(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(x: Var) -> Var:
    s = softmax_array(x.value)

    def vjp(gr):
        return (s * (gr - (gr * s).sum(axis=-1, keepdims=True)),)

    return x.graph.push("softmax", (x,), s, vjp)


def cross_entropy_logits(logits: Var, target) -> Var:
    """``-log softmax(logits)[target]`` per row of ``logits``."""
    k = logits.shape[-1]
    t = np.asarray(target)
    if not np.issubdtype(t.dtype, np.integer):
        raise IndexError(f"class targets must be integers, got {t.dtype}")
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {t.shape} do not match logits {logits.shape}")
    if np.any(t < 0) or np.any(t >= k):
        raise IndexError(f"class target out of range [0, {k})")
    logp = log_softmax_array(logits.value)
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    onehot = np.zeros_like(logp)
    np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)

    def vjp(gr):
        return (np.asarray(gr)[..., None] * (np.exp(logp) - onehot),)

    return logits.graph.push("cross_entropy", (logits,), -picked, vjp)


def bce_logits(logit: Var, target) -> Var:
    """Binary cross-entropy of ``sigmoid(logit)`` against 0/1 targets, elementwise."""
    z = logit.value
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), z.shape)
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    p = sigmoid_array(z)
    return logit.graph.push("bce", (logit,), loss, lambda gr: (gr * (p - t),))
