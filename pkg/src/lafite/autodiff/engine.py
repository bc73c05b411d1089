"""Minimal reverse-mode autodiff over numpy arrays.

Every op returns a :class:`Var` whose ``backward_fn`` maps the output
gradient to one gradient per parent. :func:`backward` walks the graph in
reverse topological order and accumulates into ``Var.grad``. Floating
inputs keep their dtype (networks run in float32, gradient checks in
float64); anything else is converted to float64.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=False):
        v = np.asarray(value)
        self.value = v if v.dtype in (np.float32, np.float64) else v.astype(DTYPE)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)


def param(value, dtype=None) -> Var:
    return Var(np.asarray(value, dtype=dtype), requires_grad=True)


def const(value, dtype=None) -> Var:
    return Var(np.asarray(value, dtype=dtype))


def _node(value, parents, fn, op):
    return Var(value, parents, fn, op)


def backward(out: Var, grad=None) -> None:
    """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if grad is None:
        if out.value.size != 1:
            raise ValueError("grad must be given for non-scalar outputs")
        grad = np.ones_like(out.value)
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        v, done = stack.pop()
        if done:
            order.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    grads = {id(out): np.asarray(grad, dtype=out.value.dtype)}
    for v in reversed(order):
        g = grads.pop(id(v), None)
        if g is None:
            continue
        if v.backward_fn is None:
            v.grad = g if v.grad is None else v.grad + g
            continue
        for p, pg in zip(v.parents, v.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.value.shape:
                raise AssertionError(f"{v.op}: gradient shape {pg.shape} != {p.value.shape}")
            grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg


# --- ops ---------------------------------------------------------------------


def _check_same(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Var, b: Var) -> Var:
    _check_same(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Var, b: Var) -> Var:
    _check_same(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def affine(x: Var, W: Var, b: Var) -> Var:
    """``x @ W + b`` over the last axis of ``x``."""
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"affine: cannot apply {W.shape} weights to {x.shape} input")
    xv = x.value.reshape(-1, W.shape[0])
    out = (xv @ W.value + b.value).reshape(x.shape[:-1] + (W.shape[1],))

    def fn(g):
        g2 = g.reshape(-1, W.shape[1])
        return (
            (g2 @ W.value.T).reshape(x.shape),
            xv.T @ g2,
            g2.sum(axis=0),
        )

    return _node(out, (x, W, b), fn, "affine")


def silu(x: Var) -> Var:
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * s
    return _node(out, (x,), lambda g: (g * (s * (1 + x.value * (1 - s))),), "silu")


def conv3x3(x: Var, W: Var, b: Var) -> Var:
    """3x3 convolution, stride 1, zero padding; ``x`` is ``[N, H, W, Cin]``."""
    if x.value.ndim != 4 or W.shape[:3] != (3, 3, x.shape[3]) or b.shape != (W.shape[3],):
        raise ValueError(f"conv3x3: weights {W.shape} incompatible with input {x.shape}")
    N, H, Wd, C = x.shape
    Co = W.shape[3]
    xp = np.pad(x.value, ((0, 0), (1, 1), (1, 1), (0, 0)))
    # [N, H, W, C, 3, 3] window view, copied once into the patch matrix
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(-1, C * 9)
    Wm = W.value.transpose(2, 0, 1, 3).reshape(C * 9, Co)
    out = (cols @ Wm + b.value).reshape(N, H, Wd, Co)

    def fn(g):
        g2 = g.reshape(-1, Co)
        dW = (cols.T @ g2).reshape(C, 3, 3, Co).transpose(1, 2, 0, 3)
        db = g2.sum(axis=0)
        dcols = (g2 @ Wm.T).reshape(N, H, Wd, C, 3, 3)
        dxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                dxp[:, dy : dy + H, dx : dx + Wd, :] += dcols[..., dy, dx]
        return dxp[:, 1:-1, 1:-1, :], np.ascontiguousarray(dW), db

    return _node(out, (x, W, b), fn, "conv3x3")


def downsample2(x: Var) -> Var:
    """2x2 average pooling with stride 2 on ``[N, H, W, C]`` (H, W even)."""
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"downsample2 needs even spatial dims, got {H}x{W}")
    out = x.value.reshape(N, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def fn(g):
        gi = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0
        return (gi,)

    return _node(out, (x,), fn, "downsample2")


def upsample2(x: Var) -> Var:
    """Nearest-neighbour 2x upsampling on ``[N, H, W, C]``."""
    N, H, W, C = x.shape
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def fn(g):
        return (g.reshape(N, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return _node(out, (x,), fn, "upsample2")


def concat(parts: list[Var]) -> Var:
    """Concatenate along the last (channel) axis."""
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ValueError(f"concat: leading shape mismatch {p.shape} vs {parts[0].shape}")
    sizes = [p.shape[-1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=-1)
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _node(out, tuple(parts), fn, "concat")


def add_time(x: Var, e: Var) -> Var:
    """Broadcast-add a per-example vector ``e[N, C]`` over ``x[N, ..., C]``."""
    if e.value.ndim != 2 or e.shape[0] != x.shape[0] or e.shape[1] != x.shape[-1]:
        raise ValueError(f"add_time: embedding {e.shape} incompatible with {x.shape}")
    bshape = (e.shape[0],) + (1,) * (x.value.ndim - 2) + (e.shape[1],)
    out = x.value + e.value.reshape(bshape)
    axes = tuple(range(1, x.value.ndim - 1))

    def fn(g):
        return g, g.sum(axis=axes)

    return _node(out, (x, e), fn, "add_time")


def sum_squares(x: Var) -> Var:
    total = np.array((x.value.astype(np.float64) ** 2).sum(), dtype=x.value.dtype)
    return _node(total, (x,), lambda g: (2.0 * g * x.value,), "sum_squares")


def scale(x: Var, s: float) -> Var:
    return _node(x.value * s, (x,), lambda g: (g * s,), "scale")


def timestep_embedding(t, dim: int = 32, dtype=DTYPE) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, ``[N] -> [N, dim]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=DTYPE) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)
