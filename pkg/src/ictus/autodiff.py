"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation builds a node in a dynamic acyclic tape. Backward rules are
themselves written in terms of tape operations, so gradients of gradients are
available for the subset of operations whose rules stay inside the tape
(affine algebra, ReLU, sigmoid, reductions, norms). Operations whose adjoints
fall back to raw array code (convolution, pooling, concatenation, slicing,
stacking) are first-order only and raise ``SecondOrderError`` when a
graph-building backward pass reaches them.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Var",
    "ShapeError",
    "SecondOrderError",
    "no_grad",
    "as_var",
    "leaf",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "swapaxes",
    "reshape",
    "broadcast_to",
    "vsum",
    "vmean",
    "square",
    "sqrt",
    "relu",
    "sigmoid",
    "softmax",
    "conv1d",
    "adaptive_avg_pool2d",
    "concat",
    "stack",
    "getitem",
    "mse",
    "l2_norm",
    "layer_norm",
    "backward",
    "grad",
]


class ShapeError(ValueError):
    """Input shapes do not satisfy an operation's contract."""


class SecondOrderError(RuntimeError):
    """A graph-building backward pass reached a first-order-only operation."""


_GRAD_ENABLED = True


class no_grad(contextlib.AbstractContextManager):
    """Context manager that suppresses tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Var:
    """A float64 array plus its position in the tape.

    ``grad`` is populated on leaves by :func:`backward`. ``_vjp`` maps the
    output adjoint to one adjoint per parent; rules receive and return
    ``Var`` so that double backprop composes where supported.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_op", "_parents", "_vjp", "_so_ok")

    def __init__(self, data, requires_grad=False, name=""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._op = "leaf"
        self._parents: tuple[Var, ...] = ()
        self._vjp = None
        self._so_ok = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or self._op
        return f"Var({tag}, shape={self.data.shape})"

    # operator sugar; keeps model code readable
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def leaf(data, name="", requires_grad=True) -> Var:
    """A differentiable leaf (parameter or watched input)."""
    return Var(data, requires_grad=requires_grad, name=name)


def constant(data, name="") -> Var:
    return Var(data, requires_grad=False, name=name)


def _record(data, op, parents, vjp, so_ok=True) -> Var:
    """Create an output node, linking parents only when a grad path exists."""
    out = Var(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = tuple(parents)
        out._vjp = vjp
        out._so_ok = so_ok
    return out


def _shape_check(cond, op, msg):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: Var, shape: tuple[int, ...]) -> Var:
    """Reduce an adjoint back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = vsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.data.shape[i] != 1)
    if axes:
        g = vsum(g, axis=axes, keepdims=True)
    if g.data.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(data, "add", (a, b), vjp)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(data, "sub", (a, b), vjp)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(mul(g, b), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(data, "mul", (a, b), vjp)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: {a.data.shape} vs {b.data.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(data, "div", (a, b), vjp)


def neg(a) -> Var:
    a = as_var(a)

    def vjp(g):
        return (neg(g),)

    return _record(-a.data, "neg", (a,), vjp)


def square(a) -> Var:
    a = as_var(a)

    def vjp(g):
        return (mul(g, mul(2.0, a)),)

    return _record(a.data * a.data, "square", (a,), vjp)


def sqrt(a) -> Var:
    a = as_var(a)
    out = _record(np.sqrt(a.data), "sqrt", (a,), None)

    def vjp(g):
        return (div(g, mul(2.0, out)),)

    out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _shape_check(a.ndim >= 2 and b.ndim >= 2, "matmul", f"operands must be >=2-d, got {a.data.shape} and {b.data.shape}")
    _shape_check(
        a.data.shape[-1] == b.data.shape[-2],
        "matmul",
        f"inner dims differ: {a.data.shape} @ {b.data.shape}",
    )
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot broadcast {a.data.shape} @ {b.data.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(matmul(g, swapaxes(b, -1, -2)), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(matmul(swapaxes(a, -1, -2), g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(data, "matmul", (a, b), vjp)


def swapaxes(a, ax1: int, ax2: int) -> Var:
    a = as_var(a)

    def vjp(g):
        return (swapaxes(g, ax1, ax2),)

    return _record(np.swapaxes(a.data, ax1, ax2), "swapaxes", (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.data.shape

    def vjp(g):
        return (reshape(g, old),)

    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}") from exc
    return _record(data, "reshape", (a,), vjp)


def broadcast_to(a, shape) -> Var:
    a = as_var(a)
    old = a.data.shape

    def vjp(g):
        return (_unbroadcast(g, old),)

    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {old} -> {shape}") from exc
    return _record(np.ascontiguousarray(data), "broadcast_to", (a,), vjp)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def vsum(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            kept = [1 if i in axes else s for i, s in enumerate(a.data.shape)]
            g = reshape(g, tuple(kept))
        return (broadcast_to(g, a.data.shape),)

    return _record(data, "sum", (a,), vjp)


def vmean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.data.shape[i] for i in axes])) if axes else 1
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a) -> Var:
    a = as_var(a)
    # subgradient at exactly 0 is 0; second derivative vanishes off the kink,
    # so the constant mask keeps double backprop exact almost everywhere
    mask = (a.data > 0).astype(np.float64)

    def vjp(g):
        return (mul(g, constant(mask)),)

    return _record(np.maximum(a.data, 0.0), "relu", (a,), vjp)


def sigmoid(a) -> Var:
    a = as_var(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    out = _record(data, "sigmoid", (a,), None)

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out._vjp = vjp
    return out


def softmax(a, axis=-1) -> Var:
    a = as_var(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out = _record(data, "softmax", (a,), None)

    def vjp(g):
        inner = vsum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# convolution and pooling (first-order only)
# ---------------------------------------------------------------------------


def conv1d(x, w, b=None, mode="same") -> Var:
    """True 1D convolution over the second-to-last axis.

    ``x``: (..., L, C_in); ``w``: (K, C_in, C_out); ``b``: (C_out,) or None.
    out[..., t, d] = sum_j sum_c w[j, c, d] * x[..., t - j, c], with the
    signal zero-padded on the left by K-1 for ``mode="same"`` (length
    preserved) or restricted to fully-overlapping positions for
    ``mode="valid"`` (length L - K + 1).
    """
    x, w = as_var(x), as_var(w)
    _shape_check(x.ndim >= 2, "conv1d", f"signal must be >=2-d, got {x.data.shape}")
    _shape_check(w.ndim == 3, "conv1d", f"kernel must be (K, C_in, C_out), got {w.data.shape}")
    K, cin, cout = w.data.shape
    _shape_check(
        x.data.shape[-1] == cin,
        "conv1d",
        f"signal features {x.data.shape[-1]} != kernel C_in {cin}",
    )
    L = x.data.shape[-2]
    if mode == "same":
        pad = [(0, 0)] * (x.ndim - 2) + [(K - 1, 0), (0, 0)]
        xp = np.pad(x.data, pad)
        out_len = L
    elif mode == "valid":
        _shape_check(L >= K, "conv1d", f"signal length {L} < kernel size {K}")
        xp = x.data
        out_len = L - K + 1
    else:
        raise ValueError(f"conv1d: unknown mode {mode!r}")

    # windows[..., t, i, c] = xp[..., t + i, c]; tap j sits at i = K - 1 - j
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=xp.ndim - 2)
    win = np.swapaxes(win, -1, -2)  # (..., out_len, K, C_in)
    wf = w.data[::-1]  # flip so plain contraction realizes true convolution
    data = np.einsum("...tic,icd->...td", win, wf, optimize=True)
    if b is not None:
        b = as_var(b)
        _shape_check(b.data.shape == (cout,), "conv1d", f"bias shape {b.data.shape} != ({cout},)")
        data = data + b.data

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gd = g.data
        gx = None
        if x.requires_grad:
            # adjoint w.r.t. windows, then overlap-add back onto the padded signal
            gwin = np.einsum("...td,icd->...tic", gd, wf, optimize=True)
            gxp = np.zeros_like(xp)
            for i in range(K):
                gxp[..., i : i + out_len, :] += gwin[..., :, i, :]
            gx = constant(gxp[..., K - 1 :, :] if mode == "same" else gxp)
        gwf = np.einsum("...tic,...td->icd", win, gd, optimize=True)
        gw = gwf[::-1].copy()
        grads = [gx, constant(gw)]
        if b is not None:
            axes = tuple(range(gd.ndim - 1))
            grads.append(constant(gd.sum(axis=axes)))
        return tuple(grads)

    return _record(data, "conv1d", parents, vjp, so_ok=False)


def _pool_bins(size: int, out: int) -> list[tuple[int, int]]:
    return [(size * i // out, size * (i + 1) // out) for i in range(out)]


def adaptive_avg_pool2d(a, out_hw: int) -> Var:
    """Average-pool the last two axes down to at most ``out_hw`` each.

    Axes already <= out_hw pass through unpooled. Bins are contiguous and
    near-equal, matching adaptive pooling semantics.
    """
    a = as_var(a)
    _shape_check(a.ndim >= 2, "adaptive_avg_pool2d", f"need >=2-d input, got {a.data.shape}")
    R, C = a.data.shape[-2:]
    pr, pc = min(R, out_hw), min(C, out_hw)
    if pr == R and pc == C:
        return reshape(a, a.data.shape)  # no-op keeps graph uniform
    rbins, cbins = _pool_bins(R, pr), _pool_bins(C, pc)
    data = np.empty(a.data.shape[:-2] + (pr, pc))
    for i, (r0, r1) in enumerate(rbins):
        for j, (c0, c1) in enumerate(cbins):
            data[..., i, j] = a.data[..., r0:r1, c0:c1].mean(axis=(-1, -2))

    def vjp(g):
        gx = np.zeros_like(a.data)
        for i, (r0, r1) in enumerate(rbins):
            for j, (c0, c1) in enumerate(cbins):
                cnt = (r1 - r0) * (c1 - c0)
                gx[..., r0:r1, c0:c1] += g.data[..., i : i + 1, j : j + 1] / cnt
        return (constant(gx),)

    return _record(data, "adaptive_avg_pool2d", (a,), vjp, so_ok=False)


def concat(parts: Sequence, axis=-1) -> Var:
    parts = [as_var(p) for p in parts]
    _shape_check(len(parts) > 0, "concat", "empty input list")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.data.shape for p in parts]}") from exc
    ax = axis % data.ndim
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for k in range(len(parts)):
            sl = [slice(None)] * data.ndim
            sl[ax] = slice(offsets[k], offsets[k + 1])
            grads.append(constant(g.data[tuple(sl)]))
        return tuple(grads)

    return _record(data, "concat", tuple(parts), vjp, so_ok=False)


def stack(parts: Sequence, axis=0) -> Var:
    parts = [as_var(p) for p in parts]
    _shape_check(len(parts) > 0, "stack", "empty input list")
    try:
        data = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: incompatible shapes {[p.data.shape for p in parts]}") from exc
    ax = axis % data.ndim

    def vjp(g):
        return tuple(constant(np.take(g.data, k, axis=ax)) for k in range(len(parts)))

    return _record(data, "stack", tuple(parts), vjp, so_ok=False)


def getitem(a, key) -> Var:
    a = as_var(a)
    data = a.data[key]

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[key] = g.data  # basic indexing only: slices never overlap
        return (constant(gx),)

    return _record(np.array(data, copy=True), "getitem", (a,), vjp, so_ok=False)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def mse(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _shape_check(a.data.shape == b.data.shape, "mse", f"{a.data.shape} vs {b.data.shape}")
    return vmean(square(sub(a, b)))


def l2_norm(a, axis=None) -> Var:
    return sqrt(vsum(square(a), axis=axis))


def layer_norm(a, gamma, beta, eps=1e-5) -> Var:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = as_var(a)
    m = vmean(a, axis=-1, keepdims=True)
    centered = sub(a, m)
    var = vmean(square(centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gamma), beta)


# ---------------------------------------------------------------------------
# backward passes
# ---------------------------------------------------------------------------


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
    return order


def _backprop(root: Var, create_graph: bool) -> dict[int, Var]:
    if root.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return {}
    order = _toposort(root)
    grads: dict[int, Var] = {id(root): constant(np.ones_like(root.data))}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None or node._vjp is None:
                if g is not None:
                    grads[id(node)] = g
                continue
            if create_graph and not node._so_ok:
                raise SecondOrderError(
                    f"operation '{node._op}' does not support second-order differentiation"
                )
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    # re-key by node so callers can look up leaves
    by_node: dict[int, Var] = {}
    for node in order:
        if id(node) in grads:
            by_node[id(node)] = grads[id(node)]
    return by_node


def backward(loss: Var, create_graph: bool = False) -> None:
    """Accumulate ``.grad`` (float64 arrays) on every reachable leaf."""
    grads = _backprop(loss, create_graph)
    order = _toposort(loss)
    for node in order:
        if node._vjp is None and node.requires_grad and id(node) in grads:
            g = grads[id(node)].data
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output: Var, wrt: Iterable[Var], create_graph: bool = False) -> list[Var]:
    """Return gradient Vars of a scalar output w.r.t. selected leaves.

    With ``create_graph=True`` the returned nodes stay on the tape and can
    be differentiated again (restricted to second-order-capable operations).
    """
    wrt = list(wrt)
    grads = _backprop(output, create_graph)
    out = []
    for v in wrt:
        g = grads.get(id(v))
        if g is None:
            g = constant(np.zeros_like(v.data))
        out.append(g)
    return out
