"""Dense float64 tensors with taped reverse-mode differentiation.

Just enough machinery for the encoder, score, and loss: a Tensor holds
contiguous float64 values (and a same-shape gradient accumulator when
flagged trainable), a Tape records every primitive application in
execution order, and backward() replays the records in exact reverse.
Gradients sum over all uses of a tensor; callers zero them between
steps.

Ops only record when a tape is active, so evaluation code runs the same
kernels with zero bookkeeping. Every op output is checked for NaN/Inf;
a non-finite value is a hard error, not a warning.

Operands may be Tensors or plain ndarrays/floats. Non-Tensor operands
are constants: no gradient flows into them, and they may broadcast up
to the Tensor operand's shape (never the other way around). Elementwise
ops between two Tensors require identical shapes.
"""

import threading

import numpy as np

from .errors import NumericalError, ShapeError

_tls = threading.local()


def _stack():
    if not hasattr(_tls, "tapes"):
        _tls.tapes = []
    return _tls.tapes


def active_tape():
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tensor:
    """A dense float64 array, optionally carrying a gradient accumulator."""

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        v = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.values = v
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(v) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.values.shape}{tag}, requires_grad={self.requires_grad})"


class TapeNode:
    """One recorded primitive application: output plus its backward rule."""

    __slots__ = ("op", "output", "backward_fn")

    def __init__(self, op, output, backward_fn):
        self.op = op
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self

    def backward(self, output: Tensor, seed=None):
        """Accumulate d(output)/d(x) into the .grad of every tensor on the tape.

        ``output`` is normally a scalar; a non-scalar output needs an
        explicit same-shape ``seed`` cotangent.
        """
        if seed is None:
            if output.values.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(output.values)
        output._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            node.backward_fn(g)


def _values(x):
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _needs_grad(*xs):
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _make(op: str, values, needs: bool) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.values = np.asarray(values, dtype=np.float64)
    out.requires_grad = needs
    out.grad = None
    out.name = None
    return out


def _record(op, out, backward_fn):
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(TapeNode(op, out, backward_fn))
    return out


def _check_const_shape(op, tensor_shape, const_shape):
    try:
        bshape = np.broadcast_shapes(tensor_shape, const_shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {tensor_shape} and {const_shape} do not broadcast")
    if bshape != tuple(tensor_shape):
        raise ShapeError(
            f"{op}: constant of shape {const_shape} may not broadcast the "
            f"tensor of shape {tensor_shape} up to {bshape}"
        )


def _binary_elementwise(op, a, b, fwd, da, db):
    av, bv = _values(a), _values(b)
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and b_t:
        if av.shape != bv.shape:
            raise ShapeError(f"{op}: tensor shapes differ: {av.shape} vs {bv.shape}")
    elif a_t:
        _check_const_shape(op, av.shape, bv.shape)
    elif b_t:
        _check_const_shape(op, bv.shape, av.shape)
    out = _make(op, fwd(av, bv), _needs_grad(a, b))

    def backward(g):
        if a_t and a.requires_grad:
            a._accumulate(da(g, av, bv))
        if b_t and b.requires_grad:
            b._accumulate(db(g, av, bv))

    return _record(op, out, backward)


def add(a, b):
    return _binary_elementwise("add", a, b, lambda x, y: x + y,
                               lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary_elementwise("sub", a, b, lambda x, y: x - y,
                               lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary_elementwise("mul", a, b, lambda x, y: x * y,
                               lambda g, x, y: g * y, lambda g, x, y: g * x)


def scalar_mul(c: float, a):
    c = float(c)
    av = _values(a)
    out = _make("scalar_mul", c * av, _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(c * g)

    return _record("scalar_mul", out, backward)


def add_rowvec(x, v):
    """x + v with v broadcast over the rows of x. v may be trainable."""
    xv, vv = _values(x), _values(v)
    if xv.ndim != 2 or vv.ndim != 1 or xv.shape[1] != vv.shape[0]:
        raise ShapeError(f"add_rowvec: got shapes {xv.shape} and {vv.shape}")
    out = _make("add_rowvec", xv + vv[None, :], _needs_grad(x, v))

    def backward(g):
        if isinstance(x, Tensor) and x.requires_grad:
            x._accumulate(g)
        if isinstance(v, Tensor) and v.requires_grad:
            v._accumulate(g.sum(axis=0))

    return _record("add_rowvec", out, backward)


def matmul(a, b):
    av, bv = _values(a), _values(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: got shapes {av.shape} and {bv.shape}")
    out = _make("matmul", av @ bv, _needs_grad(a, b))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(g @ bv.T)
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(av.T @ g)

    return _record("matmul", out, backward)


def sparse_matmul(s, x):
    """s @ x for a constant scipy sparse matrix s; gradients flow into x only."""
    xv = _values(x)
    if s.shape[1] != xv.shape[0]:
        raise ShapeError(f"sparse_matmul: got shapes {s.shape} and {xv.shape}")
    out = _make("sparse_matmul", np.asarray(s @ xv), _needs_grad(x))
    st = s.T.tocsr()

    def backward(g):
        if isinstance(x, Tensor) and x.requires_grad:
            x._accumulate(np.asarray(st @ g))

    return _record("sparse_matmul", out, backward)


def gather(m, idx):
    """Select rows of a matrix; the backward rule scatter-adds into them."""
    mv = _values(m)
    if mv.ndim != 2:
        raise ShapeError(f"gather: expected a matrix, got shape {mv.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather: expected a flat index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= mv.shape[0]):
        raise ShapeError(f"gather: index out of range for {mv.shape[0]} rows")
    out = _make("gather", mv[idx], _needs_grad(m))

    def backward(g):
        if isinstance(m, Tensor) and m.requires_grad:
            acc = np.zeros_like(mv)
            np.add.at(acc, idx, g)
            m._accumulate(acc)

    return _record("gather", out, backward)


def concat(parts):
    """Concatenate along the last axis."""
    vals = [_values(p) for p in parts]
    lead = vals[0].shape[:-1]
    for v in vals[1:]:
        if v.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ: {[v.shape for v in vals]}")
    out = _make("concat", np.concatenate(vals, axis=-1), _needs_grad(*parts))
    widths = [v.shape[-1] for v in vals]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if isinstance(p, Tensor) and p.requires_grad:
                p._accumulate(g[..., offset:offset + w])
            offset += w

    return _record("concat", out, backward)


def slice_cols(a, start: int, stop: int):
    """Contiguous slice along the last axis; backward zero-pads."""
    av = _values(a)
    if not 0 <= start <= stop <= av.shape[-1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {av.shape}")
    out = _make("slice_cols", av[..., start:stop].copy(), _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            acc = np.zeros_like(av)
            acc[..., start:stop] = g
            a._accumulate(acc)

    return _record("slice_cols", out, backward)


def _unary(op, a, fwd, dfdx):
    av = _values(a)
    y = fwd(av)
    out = _make(op, y, _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(g * dfdx(av, y))

    return _record(op, out, backward)


def relu(a):
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda x, y: (x > 0.0).astype(np.float64))


def sigmoid(a):
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary("sigmoid", a, fwd, lambda x, y: y * (1.0 - y))


def log(a):
    return _unary("log", a, np.log, lambda x, y: 1.0 / x)


def sin(a):
    return _unary("sin", a, np.sin, lambda x, y: np.cos(x))


def cos(a):
    return _unary("cos", a, np.cos, lambda x, y: -np.sin(x))


def softmax(a, axis=-1):
    av = _values(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make("softmax", y, _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    return _record("softmax", out, backward)


def tensor_sum(a, axis=None):
    av = _values(a)
    out = _make("sum", np.sum(av, axis=axis), _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, av.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), av.shape).copy())

    return _record("sum", out, backward)


def tensor_mean(a, axis=None):
    av = _values(a)
    count = av.size if axis is None else av.shape[axis]
    out = _make("mean", np.mean(av, axis=axis), _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g / count, av.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g / count, axis), av.shape).copy())

    return _record("mean", out, backward)


def l2_norm(a):
    """Euclidean norm along the last axis. Zero rows get a zero gradient."""
    av = _values(a)
    y = np.sqrt(np.sum(av * av, axis=-1))
    out = _make("l2_norm", y, _needs_grad(a))

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            safe = np.where(y == 0.0, 1.0, y)
            a._accumulate((g / safe)[..., None] * av)

    return _record("l2_norm", out, backward)


def primitive_set():
    """All differentiable primitives, by name."""
    return {
        "matmul": matmul,
        "sparse_matmul": sparse_matmul,
        "gather": gather,
        "concat": concat,
        "slice_cols": slice_cols,
        "add": add,
        "sub": sub,
        "mul": mul,
        "scalar_mul": scalar_mul,
        "add_rowvec": add_rowvec,
        "relu": relu,
        "sigmoid": sigmoid,
        "log": log,
        "sin": sin,
        "cos": cos,
        "softmax": softmax,
        "sum": tensor_sum,
        "mean": tensor_mean,
        "l2_norm": l2_norm,
    }


def grad_check(f, params, eps: float = 1e-5, max_samples: int = 64, seed: int = 0) -> float:
    """Compare taped gradients of a scalar computation against central differences.

    ``f`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from ``params``. Per parameter tensor, up to
    ``max_samples`` coordinates are probed (all of them when the tensor
    is small). Returns the max relative error over all probes, where the
    relative error uses a 1e-2 floor in the denominator so near-zero
    gradient pairs are compared absolutely.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
        tape.backward(out)
    analytic = [np.array(p.grad) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.values.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_samples else np.sort(rng.choice(n, max_samples, replace=False))
        an_flat = an.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(f().values)
            flat[c] = orig - eps
            f_minus = float(f().values)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(fd - an_flat[c]) / max(abs(fd), abs(an_flat[c]), 1e-2)
            worst = max(worst, err)
    return worst
