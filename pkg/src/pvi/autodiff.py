"""Minimal reverse-mode autodiff over dense float64 arrays.

A ``Value`` wraps an ndarray (rank <= 3) together with its provenance; calling
``backward`` on a scalar Value walks the tape in reverse topological order and
accumulates cotangents into every upstream Value that requires gradients.

Besides the usual dense primitives there are a few fused ops sized for the
codec: gather/scatter over row indices (sparse convolution kernel maps, point
neighbourhood gathers), expert-kernel mixing, and trilinear corner gathers.
"""

from __future__ import annotations

import numpy as np


class Value:
    """Dense tensor with gradient and backpropagation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_shared")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._grad_shared = False
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        # First contribution is kept by reference (copy-on-write): many nodes
        # have a single consumer and never pay for the zero-fill + add.
        if self.grad is None:
            self.grad = g
            self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + g
            self._grad_shared = False
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_shared = False

    def backward(self) -> None:
        """Backpropagate from this (scalar) Value through the tape."""
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar Value")
        topo: list[Value] = []
        seen = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.accumulate(np.asarray(1.0))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def wrap(x) -> Value:
    """Coerce arrays/scalars to constant Values; pass Values through."""
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return Value(out_data, parents=(a, b), backward=backward)


def sub(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return Value(out_data, parents=(a, b), backward=backward)


def mul(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Value(out_data, parents=(a, b), backward=backward)


def scale(a, s: float) -> Value:
    a = wrap(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return Value(a.data * s, parents=(a,), backward=backward)


def neg(a) -> Value:
    return scale(a, -1.0)


def matmul(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return Value(out_data, parents=(a, b), backward=backward)


def relu(a) -> Value:
    a = wrap(a)
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return Value(a.data * mask, parents=(a,), backward=backward)


def tanh(a) -> Value:
    a = wrap(a)
    t = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - t * t))

    return Value(t, parents=(a,), backward=backward)


def sigmoid(a) -> Value:
    a = wrap(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * s * (1.0 - s))

    return Value(s, parents=(a,), backward=backward)


def softplus(a) -> Value:
    a = wrap(a)
    out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        if a.requires_grad:
            s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                         np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
            a.accumulate(g * s)

    return Value(out_data, parents=(a,), backward=backward)


def exp(a) -> Value:
    a = wrap(a)
    e = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * e)

    return Value(e, parents=(a,), backward=backward)


def log(a) -> Value:
    a = wrap(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    return Value(np.log(a.data), parents=(a,), backward=backward)


def clamp_min(a, floor: float) -> Value:
    """max(a, floor); gradient flows only where a > floor."""
    a = wrap(a)
    mask = a.data > floor

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return Value(np.maximum(a.data, floor), parents=(a,), backward=backward)


def vsum(a, axis=None, keepdims: bool = False) -> Value:
    a = wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return Value(out_data, parents=(a,), backward=backward)


def reshape(a, shape) -> Value:
    a = wrap(a)
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(old))

    return Value(a.data.reshape(shape), parents=(a,), backward=backward)


def concat_cols(parts) -> Value:
    """Concatenate 2-D Values along the channel (last) axis."""
    parts = [wrap(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        start = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate(g[:, start:start + w])
            start += w

    return Value(out_data, parents=tuple(parts), backward=backward)


def slice_cols(a, j0: int, j1: int) -> Value:
    a = wrap(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, j0:j1] = g
            a.accumulate(full)

    return Value(a.data[:, j0:j1], parents=(a,), backward=backward)


def softmax(a, axis: int = -1) -> Value:
    a = wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate((g - dot) * y)

    return Value(y, parents=(a,), backward=backward)


def global_mean_pool(a) -> Value:
    """Column means of an (N, C) Value, shaped (1, C)."""
    a = wrap(a)
    n = a.data.shape[0]
    out_data = a.data.mean(axis=0, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return Value(out_data, parents=(a,), backward=backward)


def bce_with_logits(logits, labels: np.ndarray) -> Value:
    """Mean binary cross entropy against {0,1} labels, stable in the logits."""
    z = wrap(logits)
    x = np.asarray(labels, dtype=np.float64)
    if x.shape != z.data.shape:
        raise ValueError("label shape mismatch")
    per = np.maximum(z.data, 0.0) - z.data * x + np.log1p(np.exp(-np.abs(z.data)))
    n = z.data.size

    def backward(g):
        if z.requires_grad:
            s = np.where(z.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(z.data))),
                         np.exp(-np.abs(z.data)) / (1.0 + np.exp(-np.abs(z.data))))
            z.accumulate(g * (s - x) / n)

    return Value(per.mean(), parents=(z,), backward=backward)


def uniform_noise(a, rng: np.random.Generator) -> Value:
    """Additive U(-0.5, 0.5) noise; gradient passes through unchanged."""
    a = wrap(a)
    noise = rng.uniform(-0.5, 0.5, size=a.data.shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)

    return Value(a.data + noise, parents=(a,), backward=backward)


def gather_rows(a, idx: np.ndarray, unique: bool = False) -> Value:
    """Select rows of a 2-D Value; repeated indices are allowed.

    Pass unique=True (caller-guaranteed) to use plain fancy scatter in the
    backward pass instead of the much slower np.add.at.
    """
    a = wrap(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            da = np.zeros_like(a.data)
            if unique:
                da[idx] = g
            else:
                np.add.at(da, idx, g)
            a.accumulate(da)

    return Value(a.data[idx], parents=(a,), backward=backward)


def kernel_map_conv(feats, weights, bias, pairs, m_out: int) -> Value:
    """Sparse convolution over a kernel map.

    ``pairs`` is a sequence of (in_rows, out_rows) index arrays, one entry per
    kernel offset, aligned with the first axis of ``weights`` (k^3, Cin, Cout).
    Row indices are unique within each offset, which keeps the fancy-indexed
    accumulation well defined.
    """
    feats, weights, bias = wrap(feats), wrap(weights), wrap(bias)
    c_out = weights.data.shape[2]
    if weights.data.shape[1] != feats.data.shape[1]:
        raise ValueError(f"kernel expects {weights.data.shape[1]} input channels, "
                         f"got {feats.data.shape[1]}")
    out_data = np.zeros((m_out, c_out), dtype=np.float64)
    for o, (ii, oi) in enumerate(pairs):
        if len(ii):
            out_data[oi] += feats.data[ii] @ weights.data[o]
    out_data += bias.data

    def backward(g):
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        dw = np.zeros_like(weights.data) if weights.requires_grad else None
        df = np.zeros_like(feats.data) if feats.requires_grad else None
        for o, (ii, oi) in enumerate(pairs):
            if not len(ii):
                continue
            go = g[oi]
            if dw is not None:
                dw[o] += feats.data[ii].T @ go
            if df is not None:
                df[ii] += go @ weights.data[o].T
        if dw is not None:
            weights.accumulate(dw)
        if df is not None:
            feats.accumulate(df)

    return Value(out_data, parents=(feats, weights, bias), backward=backward)


def mix(tensors, coeffs) -> Value:
    """Convex combination sum_i coeffs[i] * tensors[i] of same-shape Values.

    ``coeffs`` is a flat Value of length n; gradients reach every tensor
    (scaled by its coefficient) and the coefficients (via inner products).
    """
    tensors = [wrap(t) for t in tensors]
    coeffs = wrap(coeffs)
    al = coeffs.data.ravel()
    if len(tensors) != al.size:
        raise ValueError("coefficient / tensor count mismatch")
    out_data = np.zeros_like(tensors[0].data)
    for a_i, t in zip(al, tensors):
        out_data += a_i * t.data

    def backward(g):
        if coeffs.requires_grad:
            dc = np.array([(g * t.data).sum() for t in tensors])
            coeffs.accumulate(dc.reshape(coeffs.data.shape))
        for a_i, t in zip(al, tensors):
            if t.requires_grad:
                t.accumulate(g * a_i)

    return Value(out_data, parents=(*tensors, coeffs), backward=backward)


def trilinear_gather(feats, rows: np.ndarray, weights: np.ndarray) -> Value:
    """Weighted 8-corner gather: rows (Q, 8) into feats, -1 rows contribute 0."""
    feats = wrap(feats)
    q = rows.shape[0]
    out_data = np.zeros((q, feats.data.shape[1]), dtype=np.float64)
    hits = [(rows[:, c] >= 0) for c in range(8)]
    for c in range(8):
        h = hits[c]
        if h.any():
            out_data[h] += weights[h, c, None] * feats.data[rows[h, c]]

    def backward(g):
        if not feats.requires_grad:
            return
        df = np.zeros_like(feats.data)
        for c in range(8):
            h = hits[c]
            if h.any():
                np.add.at(df, rows[h, c], weights[h, c, None] * g[h])
        feats.accumulate(df)

    return Value(out_data, parents=(feats,), backward=backward)


def grad_check(f, inputs, h: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` maps the list of input Values to a scalar Value. Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-6).
    """
    for v in inputs:
        v.zero_grad()
    out = f(inputs)
    out.backward()
    worst = 0.0
    for v in inputs:
        analytic = v.grad if v.grad is not None else np.zeros_like(v.data)
        flat = v.data.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(f(inputs).data)
            flat[j] = orig - h
            fm = float(f(inputs).data)
            flat[j] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.ravel()[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
