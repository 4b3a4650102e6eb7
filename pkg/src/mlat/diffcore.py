"""Dense float64 tensors with reverse-mode automatic differentiation.

Expressions form an acyclic graph of primitive ops over numpy arrays.
Construction is symbolic (shapes are inferred eagerly, values are not),
evaluation binds parameter nodes against a ParamStore and caches results
until the store version changes. Gradients are exact reverse-mode
accumulations, checked against central finite differences in the tests.

Everything is float64 and single-threaded; tensors are immutable once
produced, so sharing values across threads is safe.
"""

from __future__ import annotations

import math
import struct
import warnings

import numpy as np

from .errors import (
    NonScalarRoot,
    NumericalFailure,
    ShapeMismatch,
    UnresolvedParameter,
)

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def as_array(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 ndarray (0-d stays 0-d)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class ParamStore:
    """Named parameter tensors plus AdamW moments and a step counter.

    Mutation bumps `version`, which invalidates cached expression values.
    Names in `frozen` are excluded from optimizer updates.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count: int = 0
        self.version: int = 0
        self.frozen: set[str] = set()

    def add(self, name: str, value) -> str:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        self.params[name] = as_array(value)
        self.version += 1
        return name

    def get(self, name: str) -> np.ndarray:
        try:
            return self.params[name]
        except KeyError:
            raise UnresolvedParameter(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def set_(self, name: str, value) -> None:
        old = self.get(name)
        arr = as_array(value)
        if arr.shape != old.shape:
            raise ShapeMismatch("set_", old.shape, arr.shape)
        self.params[name] = arr
        self.version += 1

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.params if n.startswith(prefix))

    def freeze(self, prefix: str = "") -> None:
        self.frozen.update(self.names(prefix))

    def unfreeze(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self.frozen.discard(n)

    def trainable_names(self) -> list[str]:
        return sorted(n for n in self.params if n not in self.frozen)


class Expr:
    """One node of the differentiable computation graph."""

    __slots__ = ("op", "inputs", "meta", "shape", "has_params",
                 "_value", "_cache_key", "_topo", "_saved")

    def __init__(self, op: str, inputs: tuple, meta, shape: tuple):
        self.op = op
        self.inputs = inputs
        self.meta = meta
        self.shape = tuple(int(s) for s in shape)
        self.has_params = op == "param" or any(c.has_params for c in inputs)
        self._value = None
        self._cache_key = None
        self._topo = None
        self._saved = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)

    def __repr__(self):
        return f"Expr({self.op}, shape={self.shape})"


def _wrap(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


# ---------------------------------------------------------------------------
# constructors


def const(value) -> Expr:
    arr = as_array(value)
    node = Expr("const", (), arr, arr.shape)
    node._value = arr
    return node


def param(store: ParamStore, name: str) -> Expr:
    shape = store.get(name).shape
    return Expr("param", (), name, shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


def add(a: Expr, b: Expr) -> Expr:
    return Expr("add", (a, b), None, _broadcast_shape("add", a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("mul", (a, b), None, _broadcast_shape("mul", a, b))


def neg(a: Expr) -> Expr:
    return Expr("neg", (a,), None, a.shape)


def matmul(a: Expr, b: Expr) -> Expr:
    if len(a.shape) < 2 or len(b.shape) < 2:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None
    return Expr("matmul", (a, b), None, batch + (a.shape[-2], b.shape[-1]))


def affine(x: Expr, w: Expr, b: Expr) -> Expr:
    """Fused x @ w + b for (..., d_in) inputs, (d_in, d_out) weights."""
    if len(w.shape) != 2 or len(b.shape) != 1 or len(x.shape) < 1:
        raise ShapeMismatch("affine", x.shape, w.shape, b.shape)
    if x.shape[-1] != w.shape[0] or b.shape[0] != w.shape[1]:
        raise ShapeMismatch("affine", x.shape, w.shape, b.shape)
    return Expr("affine", (x, w, b), None, x.shape[:-1] + (w.shape[1],))


def relu(a: Expr) -> Expr:
    return Expr("relu", (a,), None, a.shape)


def gelu(a: Expr) -> Expr:
    return Expr("gelu", (a,), None, a.shape)


def exp(a: Expr) -> Expr:
    return Expr("exp", (a,), None, a.shape)


def log(a: Expr) -> Expr:
    return Expr("log", (a,), None, a.shape)


def softmax_rows(a: Expr) -> Expr:
    """Softmax along the last axis; -inf entries get exactly zero weight."""
    if len(a.shape) < 1:
        raise ShapeMismatch("softmax-rows", a.shape)
    return Expr("softmax", (a,), None, a.shape)


def rms_norm(a: Expr, gain: Expr, eps: float = 1e-8) -> Expr:
    """Scale each last-axis row to unit root-mean-square, times `gain`."""
    gain = _wrap(gain)
    if gain.shape not in ((a.shape[-1],), (), (1,)):
        raise ShapeMismatch("rms-norm", a.shape, gain.shape)
    return Expr("rms_norm", (a, gain), float(eps), a.shape)


def concat(parts, axis: int = -1) -> Expr:
    parts = tuple(_wrap(p) for p in parts)
    ref = parts[0].shape
    axis = axis % len(ref)
    for p in parts[1:]:
        s = p.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeMismatch("concat", ref, s)
    out = list(ref)
    out[axis] = sum(p.shape[axis] for p in parts)
    return Expr("concat", parts, axis, tuple(out))


def _normalize_key(key, shape):
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > len(shape):
        raise ShapeMismatch("slice", shape, (len(key),))
    full = []
    for i, dim in enumerate(shape):
        k = key[i] if i < len(key) else slice(None)
        if isinstance(k, int):
            k = slice(k, k + 1) if k != -1 else slice(-1, None)
        if not isinstance(k, slice):
            raise TypeError("slice keys must be ints or slices")
        full.append(k)
    return tuple(full)


def slice_(a: Expr, key) -> Expr:
    key = _normalize_key(key, a.shape)
    out = tuple(len(range(*k.indices(dim))) for k, dim in zip(key, a.shape))
    return Expr("slice", (a,), key, out)


def reshape(a: Expr, shape) -> Expr:
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = -int(np.prod([s for s in shape if s != -1])) or -1
        rest = int(np.prod(a.shape)) // abs(known)
        shape = tuple(rest if s == -1 else s for s in shape)
    if int(np.prod(shape)) != int(np.prod(a.shape)):
        raise ShapeMismatch("reshape", a.shape, shape)
    return Expr("reshape", (a,), shape, shape)


def transpose(a: Expr, axes) -> Expr:
    axes = tuple(int(x) % len(a.shape) for x in axes)
    if sorted(axes) != list(range(len(a.shape))):
        raise ShapeMismatch("transpose", a.shape, axes)
    return Expr("transpose", (a,), axes, tuple(a.shape[i] for i in axes))


def _reduced_shape(shape, axis, keepdims):
    if axis is None:
        axes = tuple(range(len(shape)))
    elif isinstance(axis, int):
        axes = (axis % len(shape),)
    else:
        axes = tuple(a % len(shape) for a in axis)
    if keepdims:
        return tuple(1 if i in axes else s for i, s in enumerate(shape)), axes
    return tuple(s for i, s in enumerate(shape) if i not in axes), axes


def reduce_sum(a: Expr, axis=None, keepdims: bool = False) -> Expr:
    shape, axes = _reduced_shape(a.shape, axis, keepdims)
    return Expr("reduce_sum", (a,), (axes, keepdims), shape)


def reduce_mean(a: Expr, axis=None, keepdims: bool = False) -> Expr:
    shape, axes = _reduced_shape(a.shape, axis, keepdims)
    return Expr("reduce_mean", (a,), (axes, keepdims), shape)


def smooth_l1(pred: Expr, target: Expr, beta: float = 1.0) -> Expr:
    """Mean over all elements of the Huber-style smooth L1 penalty."""
    target = _wrap(target)
    if pred.shape != target.shape:
        raise ShapeMismatch("smooth-l1", pred.shape, target.shape)
    return Expr("smooth_l1", (pred, target), float(beta), ())


def clip(a: Expr, lo: float, hi: float) -> Expr:
    """Clamp values; gradient passes only strictly inside (lo, hi)."""
    return Expr("clip", (a,), (float(lo), float(hi)), a.shape)


def detach(a: Expr) -> Expr:
    """Identity forward, zero gradient to the input (stop-gradient)."""
    return Expr("detach", (a,), None, a.shape)


def broadcast_to(a: Expr, shape) -> Expr:
    shape = tuple(int(s) for s in shape)
    try:
        np.broadcast_shapes(a.shape, shape)
    except ValueError:
        raise ShapeMismatch("broadcast", a.shape, shape) from None
    return Expr("broadcast", (a,), shape, shape)


def mse(a: Expr, b: Expr) -> Expr:
    d = a - _wrap(b)
    return reduce_mean(mul(d, d))


# ---------------------------------------------------------------------------
# forward evaluation


def _forward(node: Expr, vals: list, store: ParamStore) -> np.ndarray:
    op = node.op
    if op == "param":
        return store.get(node.meta)
    if op == "add":
        return vals[0] + vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "neg":
        return -vals[0]
    if op == "matmul":
        a, b = vals
        if a.ndim > 2 and b.ndim == 2:
            # flatten the batch into one GEMM
            return np.ascontiguousarray(a.reshape(-1, a.shape[-1]) @ b).reshape(
                a.shape[:-1] + (b.shape[-1],))
        return vals[0] @ vals[1]
    if op == "affine":
        x, w, b = vals
        out = x.reshape(-1, x.shape[-1]) @ w
        out += b
        return np.ascontiguousarray(out).reshape(x.shape[:-1] + (w.shape[1],))
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "gelu":
        x = vals[0]
        x2 = x * x
        th = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
        node._saved = (x2, th)
        return 0.5 * x * (1.0 + th)
    if op == "exp":
        return np.exp(vals[0])
    if op == "log":
        return np.log(vals[0])
    if op == "softmax":
        x = vals[0]
        m = np.max(x, axis=-1, keepdims=True)
        e = np.exp(x - m)
        return e / e.sum(axis=-1, keepdims=True)
    if op == "rms_norm":
        x, gain = vals
        inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + node.meta)
        node._saved = inv
        return x * inv * gain
    if op == "concat":
        return np.concatenate(vals, axis=node.meta)
    if op == "slice":
        return vals[0][node.meta]
    if op == "reshape":
        return vals[0].reshape(node.meta)
    if op == "transpose":
        return np.ascontiguousarray(vals[0].transpose(node.meta))
    if op == "reduce_sum":
        axes, keep = node.meta
        return vals[0].sum(axis=axes, keepdims=keep)
    if op == "reduce_mean":
        axes, keep = node.meta
        return vals[0].mean(axis=axes, keepdims=keep)
    if op == "smooth_l1":
        beta = node.meta
        d = vals[0] - vals[1]
        a = np.abs(d)
        per = np.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta)
        return np.asarray(per.mean())
    if op == "clip":
        lo, hi = node.meta
        return np.clip(vals[0], lo, hi)
    if op == "detach":
        return vals[0]
    if op == "broadcast":
        return np.broadcast_to(vals[0], node.meta)
    raise AssertionError(f"unknown op {op}")


def _topo_order(root: Expr) -> list:
    if root._topo is not None:
        return root._topo
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in node.inputs:
            if id(c) not in seen:
                stack.append((c, False))
    root._topo = order
    return order


def evaluate(expr: Expr, store: ParamStore) -> np.ndarray:
    """Forward value of `expr` under the parameter bindings in `store`.

    Values are cached per node and recomputed only when the store version
    changes, so repeated calls with identical bindings are bit-identical.
    """
    key = (id(store), store.version)
    for node in _topo_order(expr):
        if node.op == "const":
            continue
        if node.has_params:
            if node._cache_key == key:
                continue
        elif node._value is not None:
            continue
        vals = [c._value for c in node.inputs]
        value = _forward(node, vals, store)
        if value.shape != node.shape:
            raise ShapeMismatch(node.op, node.shape, value.shape)
        node._value = value
        node._cache_key = key
    return expr._value


# ---------------------------------------------------------------------------
# backward rules


def _backward(node: Expr, g: np.ndarray):
    op = node.op
    vals = [c._value for c in node.inputs]
    if op == "add":
        return (_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape))
    if op == "mul":
        return (_unbroadcast(g * vals[1], vals[0].shape),
                _unbroadcast(g * vals[0], vals[1].shape))
    if op == "neg":
        return (-g,)
    if op == "matmul":
        a, b = vals
        if a.ndim > 2 and b.ndim == 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = np.ascontiguousarray(g2 @ b.T).reshape(a.shape)
            gb = a.reshape(-1, a.shape[-1]).T @ g2
            return (ga, gb)
        ga = g @ b.swapaxes(-1, -2)
        gb = a.swapaxes(-1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))
    if op == "affine":
        x, w, b = vals
        g2 = g.reshape(-1, g.shape[-1])
        gx = np.ascontiguousarray(g2 @ w.T).reshape(x.shape)
        gw = x.reshape(-1, x.shape[-1]).T @ g2
        gb = g2.sum(axis=0)
        return (gx, gw, gb)
    if op == "relu":
        return (g * (vals[0] > 0),)
    if op == "gelu":
        x = vals[0]
        if node._saved is not None:
            x2, th = node._saved
        else:
            x2 = x * x
            th = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)
    if op == "exp":
        return (g * node._value,)
    if op == "log":
        return (g / vals[0],)
    if op == "softmax":
        y = node._value
        s = (g * y).sum(axis=-1, keepdims=True)
        return ((g - s) * y,)
    if op == "rms_norm":
        x, gain = vals
        d = x.shape[-1]
        if node._saved is not None:
            r = node._saved
        else:
            r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + node.meta)
        gg = g * gain
        gx = gg * r - x * (r ** 3 / d) * (gg * x).sum(axis=-1, keepdims=True)
        ggain = _unbroadcast(g * x * r, gain.shape)
        return (gx, ggain)
    if op == "concat":
        axis = node.meta
        sizes = [v.shape[axis] for v in vals]
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))
    if op == "slice":
        out = np.zeros(vals[0].shape)
        out[node.meta] = g
        return (out,)
    if op == "reshape":
        return (g.reshape(vals[0].shape),)
    if op == "transpose":
        inv = np.argsort(node.meta)
        return (np.ascontiguousarray(g.transpose(inv)),)
    if op == "reduce_sum":
        axes, keep = node.meta
        gg = g if keep else np.expand_dims(g, axes)
        return (np.broadcast_to(gg, vals[0].shape).copy(),)
    if op == "reduce_mean":
        axes, keep = node.meta
        count = int(np.prod([vals[0].shape[a] for a in axes]))
        gg = g if keep else np.expand_dims(g, axes)
        return (np.broadcast_to(gg / count, vals[0].shape).copy(),)
    if op == "smooth_l1":
        beta = node.meta
        d = vals[0] - vals[1]
        gp = g * np.clip(d, -beta, beta) / (beta * d.size)
        return (gp, -gp)
    if op == "clip":
        lo, hi = node.meta
        inside = (vals[0] > lo) & (vals[0] < hi)
        return (g * inside,)
    if op == "detach":
        return (None,)
    if op == "broadcast":
        return (_unbroadcast(g, vals[0].shape),)
    raise AssertionError(f"unknown op {op}")


def gradient(expr: Expr, store: ParamStore, wrt=None,
             warn_missing: bool = True) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar expression.

    `wrt` is an iterable of parameter names (default: every trainable name
    in the store). Parameters not reachable from `expr` get a zero tensor
    and, unless `warn_missing` is off, a warning.
    """
    if expr.shape != ():
        raise NonScalarRoot(f"gradient root has shape {expr.shape}, expected scalar")
    evaluate(expr, store)
    if wrt is None:
        wrt = store.trainable_names()
    wrt = list(wrt)

    order = _topo_order(expr)
    adjoint: dict[int, np.ndarray] = {id(expr): np.ones(())}
    grads: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.op == "param":
            name = node.meta
            if name in grads:
                grads[name] = grads[name] + g
            else:
                grads[name] = np.asarray(g, dtype=np.float64).reshape(node.shape)
            continue
        if node.op == "const":
            continue
        for child, cg in zip(node.inputs, _backward(node, np.asarray(g))):
            if cg is None or not (child.has_params or child.op == "param"):
                continue
            prev = adjoint.get(id(child))
            adjoint[id(child)] = cg if prev is None else prev + cg

    out = {}
    for name in wrt:
        if name in grads:
            out[name] = grads[name]
        else:
            if warn_missing:
                warnings.warn(f"parameter {name!r} does not appear in the graph; "
                              "returning a zero gradient", stacklevel=2)
            out[name] = np.zeros(store.get(name).shape)
    return out


# ---------------------------------------------------------------------------
# optimizer


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Constant learning rate with a linear warm-up from zero."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One AdamW update over all trainable parameters, in place.

    Aborts without mutating anything if any gradient is non-finite.
    """
    names = store.trainable_names()
    for name in names:
        if name not in grads:
            raise KeyError(f"gradient missing for trainable parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise NumericalFailure(f"non-finite gradient for parameter {name!r}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in names:
        g = grads[name]
        m = store.moment1.get(name)
        v = store.moment2.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store.moment1[name] = m
        store.moment2[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * store.params[name]
        store.params[name] = store.params[name] - lr * update
    store.version += 1


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_difference_check(expr: Expr, store: ParamStore, names=None,
                            h: float = 1e-5, rtol: float = 1e-6,
                            atol: float = 1e-9, max_entries: int | None = None,
                            rng: np.random.Generator | None = None):
    """Compare reverse-mode gradients with central finite differences.

    Returns (ok, worst_rel, worst_abs). An entry passes when
    |analytic - fd| <= atol + rtol * max(|analytic|, |fd|).
    """
    if names is None:
        names = store.trainable_names()
    analytic = gradient(expr, store, wrt=names, warn_missing=False)
    ok = True
    worst_rel = 0.0
    worst_abs = 0.0
    for name in names:
        base = store.get(name).copy()
        flat = base.reshape(-1)
        idxs = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idxs:
            pert = flat.copy()
            pert[i] = flat[i] + h
            store.set_(name, pert.reshape(base.shape))
            f_plus = float(evaluate(expr, store))
            pert[i] = flat[i] - h
            store.set_(name, pert.reshape(base.shape))
            f_minus = float(evaluate(expr, store))
            fd = (f_plus - f_minus) / (2.0 * h)
            an = float(analytic[name].reshape(-1)[i])
            err = abs(an - fd)
            scale = max(abs(an), abs(fd))
            worst_abs = max(worst_abs, err)
            if scale > 0:
                worst_rel = max(worst_rel, err / max(scale, atol / rtol))
            if err > atol + rtol * scale:
                ok = False
        store.set_(name, base)
    return ok, worst_rel, worst_abs


# ---------------------------------------------------------------------------
# checkpoint serialization

CHECKPOINT_MAGIC = b"MLAT"
CHECKPOINT_VERSION = 1
_OPT_PREFIX = "opt/"
_META_PREFIX = "meta/"


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
    head += b"".join(struct.pack("<Q", e) for e in arr.shape)
    return head + arr.astype("<f8").tobytes(order="C")


def save_checkpoint(store: ParamStore, path, meta: dict | None = None) -> None:
    """Write parameters plus optimizer state in the MLAT binary format.

    Optimizer state lives under the reserved "opt/" name prefix; entries in
    `meta` are stored under "meta/".
    """
    entries: list[tuple[str, np.ndarray]] = []
    for name in store.names():
        entries.append((name, store.params[name]))
    for name in sorted(store.moment1):
        entries.append((_OPT_PREFIX + "m/" + name, store.moment1[name]))
        entries.append((_OPT_PREFIX + "v/" + name, store.moment2[name]))
    entries.append((_OPT_PREFIX + "step", np.asarray([float(store.step_count)])))
    for key in sorted(meta or {}):
        entries.append((_META_PREFIX + key, as_array(meta[key])))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            f.write(_pack_entry(name, arr))


def load_checkpoint(path) -> tuple[ParamStore, dict[str, np.ndarray]]:
    """Read an MLAT checkpoint; returns (store, meta-entries)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    store = ParamStore()
    meta: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from("<" + "Q" * rank, blob, off)
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        arr = np.ascontiguousarray(arr)
        if name.startswith(_OPT_PREFIX + "m/"):
            store.moment1[name[len(_OPT_PREFIX) + 2:]] = arr
        elif name.startswith(_OPT_PREFIX + "v/"):
            store.moment2[name[len(_OPT_PREFIX) + 2:]] = arr
        elif name == _OPT_PREFIX + "step":
            store.step_count = int(arr.reshape(-1)[0])
        elif name.startswith(_META_PREFIX):
            meta[name[len(_META_PREFIX):]] = arr
        else:
            store.params[name] = arr
    store.version += 1
    return store, meta
