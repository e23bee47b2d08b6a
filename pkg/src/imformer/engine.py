"""Reverse-mode tensor engine on numpy arrays.

A Tape records every op as it runs; backward() replays the record in
reverse. The op set is fixed and small: what the blocks, losses and
models need, nothing else. Ops live in the OPS registry, each with a
forward and a vjp, so the whole differentiation surface is enumerable
by tests.

Broadcasting is strict on purpose. Two operands combine only when the
shapes are identical, when one operand has a single element, or when
the smaller shape equals the trailing dims of the larger one. Anything
else raises ShapeMismatchError instead of silently broadcasting.

Everything is deterministic: plain numpy, no threads spawned here, no
global state besides the registry.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

__all__ = [
    "Tape",
    "Tensor",
    "Param",
    "Grads",
    "backward",
    "ShapeMismatchError",
    "UnknownKindError",
    "OPS",
]


class ShapeMismatchError(ValueError):
    """Operand shapes violate the strict broadcast / layout rules."""


class UnknownKindError(KeyError):
    """Op kind is not present in the registry."""


# ---------------------------------------------------------------
# shape rules
# ---------------------------------------------------------------

def _is_single(shape):
    n = 1
    for d in shape:
        n *= d
    return n == 1


def _bcast_shape(sa, sb):
    """Output shape for an elementwise pair, or raise.

    Allowed: identical shapes; one operand with a single element; the
    smaller shape equal to the trailing dims of the larger.
    """
    if sa == sb:
        return sa
    if _is_single(sa):
        return sb
    if _is_single(sb):
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    raise ShapeMismatchError(f"cannot combine shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    """Reduce an output-shaped gradient back to an operand shape."""
    if g.shape == shape:
        return g
    if _is_single(shape):
        return np.asarray(g.sum()).reshape(shape)
    extra = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(extra)))
    if g.shape != shape:
        raise ShapeMismatchError(f"gradient {g.shape} does not reduce to {shape}")
    return g


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------
# tape
# ---------------------------------------------------------------

class Tensor:
    """One value on a tape. Leaves have kind None."""

    __slots__ = ("tape", "id", "kind", "inputs", "attrs", "data",
                 "requires_grad", "ctx", "name", "_shape")

    # keep numpy from hijacking Tensor <op> ndarray
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, tape, kind, inputs, attrs, name=None):
        self.tape = tape
        self.id = -1
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.data = None
        self.requires_grad = False
        self.ctx = None
        self.name = name
        self._shape = None

    # -- introspection ------------------------------------------

    # shape is captured at append time so it survives Tape.drop
    # freeing the forward value

    @property
    def shape(self):
        return self._shape if self._shape is not None else self.data.shape

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = self.kind or "leaf"
        dt = "dropped" if self.data is None else self.data.dtype
        return f"Tensor(id={self.id}, {tag}, shape={self.shape}, dtype={dt})"

    # -- operator sugar -----------------------------------------

    def _rec(self, kind, *inputs, **attrs):
        return self.tape.record(kind, *inputs, **attrs)

    def __add__(self, o):
        return self._rec("add", self, o)

    def __radd__(self, o):
        return self._rec("add", o, self)

    def __sub__(self, o):
        return self._rec("sub", self, o)

    def __rsub__(self, o):
        return self._rec("sub", o, self)

    def __mul__(self, o):
        return self._rec("mul", self, o)

    def __rmul__(self, o):
        return self._rec("mul", o, self)

    def __truediv__(self, o):
        return self._rec("div", self, o)

    def __rtruediv__(self, o):
        return self._rec("div", o, self)

    def __matmul__(self, o):
        return self._rec("matmul", self, o)

    def __neg__(self):
        return self._rec("mul", self, -1.0)

    def __pow__(self, p):
        return self._rec("power", self, p=float(p))

    def __getitem__(self, key):
        # slices only; ints would drop axes and complicate the vjp
        if not isinstance(key, tuple):
            key = (key,)
        if any(not isinstance(k, slice) for k in key):
            raise TypeError("Tensor indexing supports slices only")
        starts, stops, steps = [], [], []
        for ax in range(self.ndim):
            sl = key[ax] if ax < len(key) else slice(None)
            b, e, s = sl.indices(self.shape[ax])
            starts.append(b)
            stops.append(e)
            steps.append(s)
        return self._rec("slice", self, starts=tuple(starts),
                         stops=tuple(stops), steps=tuple(steps))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self._rec("reshape", self, shape=tuple(int(d) for d in shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return self._rec("transpose", self, axes=tuple(int(a) for a in axes))

    def sum(self, axis=None, keepdims=False):
        return self._rec("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return self._rec("mean", self, axis=axis, keepdims=keepdims)

    def softmax(self, axis=-1):
        return self._rec("softmax", self, axis=axis)

    def exp(self):
        return self._rec("exp", self)

    def log(self):
        return self._rec("log", self)

    def sqrt(self):
        return self._rec("sqrt", self)

    def abs(self):
        return self._rec("abs", self)

    def gelu(self):
        return self._rec("gelu", self)


class Param:
    """A trainable array that outlives any single tape."""

    __slots__ = ("value", "name")

    def __init__(self, value, name=""):
        self.value = np.asarray(value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def on(self, tape):
        """Leaf tensor for this param on the given tape (memoized)."""
        return tape.bind(self)

    def __repr__(self):
        return f"Param({self.name or '?'}, shape={self.value.shape})"


class Grads(dict):
    """Gradient map keyed by tensor id."""

    def of(self, t):
        return self.get(t.id)


class Tape:
    """Append-only op record."""

    def __init__(self):
        self.nodes = []
        self._bound = {}

    def _append(self, t):
        t.id = len(self.nodes)
        t._shape = t.data.shape
        self.nodes.append(t)
        return t

    def drop(self, t):
        """Free a node's forward value before backward runs.

        Only legal when nothing recorded later reads the value and the
        node's own vjp needs no inputs beyond ctx and shape metadata
        (attention score maps feeding a softmax are the intended case).
        Shape introspection keeps working; reading data afterwards does
        not.
        """
        if t.tape is not self:
            raise ValueError("tensor belongs to a different tape")
        if t.kind is None:
            raise ValueError("refusing to drop a leaf")
        t.data = None

    def release(self):
        """Sever node edges so refcounting reclaims the tape at once.

        Tensors and the tape reference each other, which parks every
        discarded tape in the cyclic garbage collector; at training
        sizes each one pins gigabytes until a full gc pass happens to
        run. Call this when the tape is finished. The tape is unusable
        afterwards; gradients already extracted stay valid.
        """
        for t in self.nodes:
            t.data = None
            t.ctx = None
            t.inputs = ()
        self.nodes.clear()
        self._bound.clear()

    def leaf(self, value, requires_grad=False, name=None):
        t = Tensor(self, None, (), {}, name=name)
        t.data = np.asarray(value)
        if not np.issubdtype(t.data.dtype, np.floating):
            t.data = t.data.astype(np.float64)
        t.requires_grad = bool(requires_grad)
        return self._append(t)

    def const(self, value):
        return self.leaf(value, requires_grad=False)

    def bind(self, param):
        key = id(param)
        t = self._bound.get(key)
        if t is None:
            t = self.leaf(param.value, requires_grad=True, name=param.name)
            self._bound[key] = t
        return t

    def adopt(self, param, tensor):
        """Use an existing leaf as this param's binding on this tape.

        Lets a finite-difference harness substitute its own leaves for
        module parameters without touching the stored values.
        """
        if tensor.tape is not self:
            raise ValueError("tensor belongs to a different tape")
        if tensor.data.shape != param.value.shape:
            raise ShapeMismatchError(
                f"adopt shape {tensor.data.shape} != param shape {param.value.shape}")
        self._bound[id(param)] = tensor

    def _lift(self, x, dtype):
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ValueError("tensor belongs to a different tape")
            return x
        arr = np.asarray(x, dtype=dtype)
        return self.leaf(arr)

    def record(self, kind, *inputs, **attrs):
        """Run one op and append it to the tape."""
        op = OPS.get(kind)
        if op is None:
            raise UnknownKindError(kind)
        dtype = np.float64
        for x in inputs:
            if isinstance(x, Tensor):
                dtype = x.data.dtype
                break
        tin = tuple(self._lift(x, dtype) for x in inputs)
        node = Tensor(self, kind, tin, attrs)
        node.data = op.fwd(node)
        node.requires_grad = any(t.requires_grad for t in tin)
        return self._append(node)


def backward(out, seed=None, retain_all=False):
    """Gradients of a scalar output w.r.t. everything that needs them.

    Walks the tape in reverse creation order, which is a reverse
    topological order by construction. Intermediate gradients are
    dropped as soon as they are consumed unless retain_all is set.

    Args:
        out: scalar Tensor.
        seed: optional seed gradient, defaults to 1.
        retain_all: keep gradients of intermediate nodes.

    Returns:
        Grads mapping tensor id -> ndarray.
    """
    if not isinstance(out, Tensor):
        raise TypeError("backward expects a Tensor")
    if out.data.size != 1:
        raise ValueError("backward expects a scalar output")
    tape = out.tape
    grads = Grads()
    if seed is None:
        seed = np.ones_like(out.data)
    grads[out.id] = np.asarray(seed, dtype=out.data.dtype).reshape(out.data.shape)

    for i in range(out.id, -1, -1):
        node = tape.nodes[i]
        if node.kind is None or node.id not in grads:
            continue
        if not node.requires_grad:
            if not retain_all:
                del grads[node.id]
            continue
        g = grads[node.id]
        need = [t.requires_grad for t in node.inputs]
        gs = OPS[node.kind].vjp(node, g, need)
        for inp, gi in zip(node.inputs, gs):
            if gi is None or not inp.requires_grad:
                continue
            if inp.id in grads:
                grads[inp.id] = grads[inp.id] + gi
            else:
                grads[inp.id] = gi
        if not retain_all:
            del grads[node.id]
    # unused parameter leaves still get a gradient, a zero one
    for node in tape.nodes:
        if node.kind is None and node.requires_grad and node.id not in grads:
            grads[node.id] = np.zeros_like(node.data)
    return grads


# ---------------------------------------------------------------
# op registry
# ---------------------------------------------------------------

class _Op:
    __slots__ = ("kind", "fwd", "vjp")

    def __init__(self, kind, fwd, vjp):
        self.kind = kind
        self.fwd = fwd
        self.vjp = vjp


OPS: dict[str, _Op] = {}


def _register(kind, fwd, vjp):
    OPS[kind] = _Op(kind, fwd, vjp)


def _a(node, i=0):
    return node.inputs[i].data


# -- elementwise binary -----------------------------------------

def _fwd_add(n):
    _bcast_shape(_a(n, 0).shape, _a(n, 1).shape)
    return _a(n, 0) + _a(n, 1)


def _vjp_add(n, g, need):
    return (_unbroadcast(g, n.inputs[0].shape) if need[0] else None,
            _unbroadcast(g, n.inputs[1].shape) if need[1] else None)


def _fwd_sub(n):
    _bcast_shape(_a(n, 0).shape, _a(n, 1).shape)
    return _a(n, 0) - _a(n, 1)


def _vjp_sub(n, g, need):
    return (_unbroadcast(g, n.inputs[0].shape) if need[0] else None,
            _unbroadcast(-g, n.inputs[1].shape) if need[1] else None)


def _fwd_mul(n):
    _bcast_shape(_a(n, 0).shape, _a(n, 1).shape)
    return _a(n, 0) * _a(n, 1)


def _vjp_mul(n, g, need):
    a, b = _a(n, 0), _a(n, 1)
    return (_unbroadcast(g * b, a.shape) if need[0] else None,
            _unbroadcast(g * a, b.shape) if need[1] else None)


def _fwd_div(n):
    _bcast_shape(_a(n, 0).shape, _a(n, 1).shape)
    return _a(n, 0) / _a(n, 1)


def _vjp_div(n, g, need):
    a, b = _a(n, 0), _a(n, 1)
    ga = _unbroadcast(g / b, a.shape) if need[0] else None
    gb = _unbroadcast(-g * a / (b * b), b.shape) if need[1] else None
    return ga, gb


_register("add", _fwd_add, _vjp_add)
_register("sub", _fwd_sub, _vjp_sub)
_register("mul", _fwd_mul, _vjp_mul)
_register("div", _fwd_div, _vjp_div)


# -- matmul ------------------------------------------------------

def _fwd_matmul(n):
    a, b = _a(n, 0), _a(n, 1)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError("matmul batch dims must match exactly")
    return np.matmul(a, b)


def _mm_reduce(g, shape):
    # collapse broadcast batch dims of a matmul gradient
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _vjp_matmul(n, g, need):
    a, b = _a(n, 0), _a(n, 1)
    ga = gb = None
    if need[0]:
        ga = _mm_reduce(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape)
    if need[1]:
        gb = _mm_reduce(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
    return ga, gb


_register("matmul", _fwd_matmul, _vjp_matmul)


# -- layout ops --------------------------------------------------

def _fwd_transpose(n):
    axes = n.attrs["axes"]
    x = _a(n)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError(f"bad permutation {axes} for ndim {x.ndim}")
    # view, not copy: BLAS takes strided operands and reshape
    # materializes on demand anyway
    return np.transpose(x, axes)


def _vjp_transpose(n, g, need):
    axes = n.attrs["axes"]
    inv = np.argsort(axes)
    return (np.transpose(g, inv),)


def _fwd_reshape(n):
    return np.reshape(_a(n), n.attrs["shape"])


def _vjp_reshape(n, g, need):
    return (np.reshape(g, n.inputs[0].shape),)


def _fwd_concat(n):
    axis = n.attrs["axis"]
    return np.concatenate([t.data for t in n.inputs], axis=axis)


def _vjp_concat(n, g, need):
    axis = n.attrs["axis"]
    sizes = [t.shape[axis] for t in n.inputs]
    offsets = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, offsets, axis=axis))


def _fwd_slice(n):
    key = tuple(slice(b, e, s) for b, e, s in
                zip(n.attrs["starts"], n.attrs["stops"], n.attrs["steps"]))
    return _a(n)[key]


def _vjp_slice(n, g, need):
    key = tuple(slice(b, e, s) for b, e, s in
                zip(n.attrs["starts"], n.attrs["stops"], n.attrs["steps"]))
    dx = np.zeros(n.inputs[0].shape, dtype=g.dtype)
    dx[key] = g
    return (dx,)


def _fwd_pad(n):
    pad = n.attrs["pad"]
    mode = n.attrs.get("mode", "constant")
    x = _a(n)
    if len(pad) != x.ndim:
        raise ShapeMismatchError("pad spec must cover every axis")
    if mode == "constant":
        return np.pad(x, pad)
    if mode == "reflect":
        return np.pad(x, pad, mode="reflect")
    raise ValueError(f"unsupported pad mode {mode!r}")


def _vjp_pad(n, g, need):
    pad = n.attrs["pad"]
    mode = n.attrs.get("mode", "constant")
    xshape = n.inputs[0].shape
    if mode == "constant":
        key = tuple(slice(lo, lo + d) for (lo, _), d in zip(pad, xshape))
        return (g[key],)
    # reflect: route each padded cell back to its source cell
    xsize = int(np.prod(xshape, dtype=np.int64))
    idx = np.arange(xsize, dtype=np.int64).reshape(xshape)
    pid = np.pad(idx, pad, mode="reflect")
    dx = np.zeros(xsize, dtype=g.dtype)
    np.add.at(dx, pid.ravel(), g.ravel())
    return (dx.reshape(xshape),)


_register("transpose", _fwd_transpose, _vjp_transpose)
_register("reshape", _fwd_reshape, _vjp_reshape)
_register("concat", _fwd_concat, _vjp_concat)
_register("slice", _fwd_slice, _vjp_slice)
_register("pad", _fwd_pad, _vjp_pad)


# -- convolution -------------------------------------------------
#
# im2col + one GEMM. x is channels-first. The unfolded column matrix
# is stashed on the node for the weight gradient; the data gradient
# goes back through a k^d-step scatter.

def _pair(v, k):
    if isinstance(v, (tuple, list)):
        if len(v) != k:
            raise ShapeMismatchError(f"expected {k} stride/pad entries, got {v}")
        return tuple(int(e) for e in v)
    return (int(v),) * k


def _conv_out(size, k, s, p):
    o = (size + 2 * p - k) // s + 1
    if o < 1:
        raise ShapeMismatchError("conv output would be empty")
    return o


def _im2col(x, kern, stride, pad):
    """Unfold spatial patches: (B, C, *sp) -> (B, L, C*prod(kern))."""
    nd = len(kern)
    B, C = x.shape[0], x.shape[1]
    widths = ((0, 0), (0, 0)) + tuple((p, p) for p in pad)
    xp = np.pad(x, widths) if any(pad) else x
    v = sliding_window_view(xp, kern, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    v = v[sl]
    out_sp = v.shape[2:2 + nd]
    # (B, C, *out, *kern) -> (B, *out, C, *kern)
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = np.ascontiguousarray(np.transpose(v, perm))
    L = int(np.prod(out_sp, dtype=int))
    ck = C * int(np.prod(kern, dtype=int))
    return cols.reshape(B, L, ck), out_sp


def _col2im(dcols, xshape, kern, stride, pad, out_sp):
    """Scatter column gradients back onto the (padded) input."""
    nd = len(kern)
    B, C = xshape[0], xshape[1]
    psp = tuple(d + 2 * p for d, p in zip(xshape[2:], pad))
    dxp = np.zeros((B, C) + psp, dtype=dcols.dtype)
    # (B, L, C*K) -> (B, C, *kern, *out)
    dc = dcols.reshape((B,) + tuple(out_sp) + (C,) + tuple(kern))
    perm = (0, 1 + nd) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(1, 1 + nd))
    dc = np.transpose(dc, perm)
    for off in np.ndindex(*kern):
        key = (slice(None), slice(None)) + tuple(
            slice(o, o + s * n, s) for o, s, n in zip(off, stride, out_sp))
        dxp[key] += dc[(slice(None), slice(None)) + off]
    core = (slice(None), slice(None)) + tuple(
        slice(p, p + d) for p, d in zip(pad, xshape[2:]))
    return dxp[core]


def _conv_pad(n, nd, kern):
    # default is zero-padded "same" for stride 1 and odd kernels
    pad = n.attrs.get("pad", "same")
    if pad == "same":
        return tuple(k // 2 for k in kern)
    return _pair(pad, nd)


def _fwd_conv(n, nd):
    x, w = _a(n, 0), _a(n, 1)
    if x.ndim != 2 + nd or w.ndim != 2 + nd:
        raise ShapeMismatchError(f"conv{nd}d expects {2 + nd}-d input and weight")
    if w.shape[1] != x.shape[1]:
        raise ShapeMismatchError(f"conv channel mismatch: {x.shape} vs {w.shape}")
    stride = _pair(n.attrs.get("stride", 1), nd)
    pad = _conv_pad(n, nd, w.shape[2:])
    kern = w.shape[2:]
    for d, k, s, p in zip(x.shape[2:], kern, stride, pad):
        _conv_out(d, k, s, p)
    cols, out_sp = _im2col(x, kern, stride, pad)
    wf = w.reshape(w.shape[0], -1)
    y = np.matmul(cols, wf.T)  # (B, L, O)
    if len(n.inputs) == 3:
        b = _a(n, 2)
        if b.shape != (w.shape[0],):
            raise ShapeMismatchError("conv bias must be (out_channels,)")
        y = y + b
    n.ctx = (cols, out_sp)
    B = x.shape[0]
    perm = (0, 1 + nd) + tuple(range(1, 1 + nd))
    return np.ascontiguousarray(
        np.transpose(y.reshape((B,) + tuple(out_sp) + (w.shape[0],)), perm))


def _vjp_conv(n, g, need, nd):
    x, w = _a(n, 0), _a(n, 1)
    cols, out_sp = n.ctx
    stride = _pair(n.attrs.get("stride", 1), nd)
    pad = _conv_pad(n, nd, w.shape[2:])
    kern = w.shape[2:]
    B, O = x.shape[0], w.shape[0]
    # (B, O, *out) -> (B, L, O)
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,)
    gf = np.ascontiguousarray(np.transpose(g, perm)).reshape(B, -1, O)
    gx = gw = gb = None
    if need[0]:
        dcols = np.matmul(gf, w.reshape(O, -1))
        gx = _col2im(dcols, x.shape, kern, stride, pad, out_sp)
    if need[1]:
        ck = cols.shape[-1]
        gw = np.matmul(gf.reshape(-1, O).T, cols.reshape(-1, ck)).reshape(w.shape)
    if len(n.inputs) == 3 and need[2]:
        gb = gf.sum(axis=(0, 1))
    out = [gx, gw]
    if len(n.inputs) == 3:
        out.append(gb)
    return tuple(out)


_register("conv2d", lambda n: _fwd_conv(n, 2), lambda n, g, need: _vjp_conv(n, g, need, 2))
_register("conv3d", lambda n: _fwd_conv(n, 3), lambda n, g, need: _vjp_conv(n, g, need, 3))


# -- resampling --------------------------------------------------

def _fwd_down2(n):
    x = _a(n)
    if x.ndim < 2 or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeMismatchError(f"downsample2x needs even trailing dims, got {x.shape}")
    s = x.shape
    v = x.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
    return v.mean(axis=(-3, -1))


def _vjp_down2(n, g, need):
    s = _a(n).shape
    gq = (g / 4.0)[..., :, None, :, None]
    gx = np.broadcast_to(gq, g.shape[:-2] + (g.shape[-2], 2, g.shape[-1], 2))
    return (gx.reshape(s),)


def _fwd_up2(n):
    x = _a(n)
    if x.ndim < 2:
        raise ShapeMismatchError("upsample2x needs at least 2 dims")
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def _vjp_up2(n, g, need):
    s = _a(n).shape
    v = g.reshape(s[:-2] + (s[-2], 2, s[-1], 2))
    return (v.sum(axis=(-3, -1)),)


_register("downsample2x", _fwd_down2, _vjp_down2)
_register("upsample2x", _fwd_up2, _vjp_up2)


# -- nonlinear / normalization -----------------------------------

def _fwd_softmax(n):
    axis = int(n.attrs.get("axis", -1))
    x = _a(n)
    m = x.max(axis=axis, keepdims=True)
    e = x - m
    np.exp(e, out=e)
    s = e.sum(axis=axis, keepdims=True)
    np.divide(e, s, out=e)
    n.ctx = e
    return e


def _vjp_softmax(n, g, need):
    axis = int(n.attrs.get("axis", -1))
    y = n.ctx
    if axis == -1 or axis == y.ndim - 1:
        dot = np.einsum("...i,...i->...", g, y)[..., None]
    else:
        dot = (g * y).sum(axis=axis, keepdims=True)
    t = g - dot
    np.multiply(t, y, out=t)
    return (t,)


def _fwd_exp(n):
    y = np.exp(_a(n))
    n.ctx = y
    return y


def _vjp_exp(n, g, need):
    return (g * n.ctx,)


def _fwd_log(n):
    return np.log(_a(n))


def _vjp_log(n, g, need):
    return (g / _a(n),)


def _fwd_sqrt(n):
    y = np.sqrt(_a(n))
    n.ctx = y
    return y


def _vjp_sqrt(n, g, need):
    return (g / (2.0 * n.ctx),)


def _fwd_abs(n):
    return np.abs(_a(n))


def _vjp_abs(n, g, need):
    return (g * np.sign(_a(n)),)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _fwd_gelu(n):
    x = _a(n)
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    n.ctx = cdf  # erf is the expensive part; backward reuses it
    return x * cdf


def _vjp_gelu(n, g, need):
    x = _a(n)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (n.ctx + x * pdf),)


def _fwd_layernorm(n):
    # normalizes the last axis; affine scale/shift live outside as muls/adds
    eps = float(n.attrs.get("eps", 1e-5))
    x = _a(n)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    n.ctx = (y, inv)
    return y


def _vjp_layernorm(n, g, need):
    y, inv = n.ctx
    gm = g.mean(axis=-1, keepdims=True)
    gym = (g * y).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - y * gym),)


_register("softmax", _fwd_softmax, _vjp_softmax)
_register("exp", _fwd_exp, _vjp_exp)
_register("log", _fwd_log, _vjp_log)
_register("sqrt", _fwd_sqrt, _vjp_sqrt)
_register("abs", _fwd_abs, _vjp_abs)
_register("gelu", _fwd_gelu, _vjp_gelu)
_register("layernorm", _fwd_layernorm, _vjp_layernorm)


# -- reductions --------------------------------------------------

def _fwd_sum(n):
    axis = _norm_axis(n.attrs.get("axis"), _a(n).ndim)
    keep = bool(n.attrs.get("keepdims", False))
    n.attrs["axis"] = axis
    return _a(n).sum(axis=axis, keepdims=keep)


def _expand_reduced(g, xshape, axis, keep):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(xshape)), xshape)
    if not keep:
        for a in axis:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, xshape)


def _vjp_sum(n, g, need):
    axis = n.attrs.get("axis")
    keep = bool(n.attrs.get("keepdims", False))
    return (_expand_reduced(g, n.inputs[0].shape, axis, keep),)


def _fwd_mean(n):
    axis = _norm_axis(n.attrs.get("axis"), _a(n).ndim)
    keep = bool(n.attrs.get("keepdims", False))
    n.attrs["axis"] = axis
    return _a(n).mean(axis=axis, keepdims=keep)


def _vjp_mean(n, g, need):
    xshape = n.inputs[0].shape
    axis = n.attrs.get("axis")
    keep = bool(n.attrs.get("keepdims", False))
    if axis is None:
        count = int(np.prod(xshape, dtype=np.int64))
    else:
        count = 1
        for a in axis:
            count *= xshape[a]
    return (_expand_reduced(g, xshape, axis, keep) / count,)


def _fwd_power(n):
    p = float(n.attrs["p"])
    return _a(n) ** p


def _vjp_power(n, g, need):
    p = float(n.attrs["p"])
    x = _a(n)
    return (g * p * x ** (p - 1.0),)


_register("sum", _fwd_sum, _vjp_sum)
_register("mean", _fwd_mean, _vjp_mean)
_register("power", _fwd_power, _vjp_power)
