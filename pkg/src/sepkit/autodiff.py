"""Reverse-mode differentiation over the operator set.

A `Tape` records operations in execution order (which is already
topological); `backward` walks the record once in reverse, accumulating
vector-Jacobian products into every named leaf.  Operations are plain
functions over `Var` values: if no input carries a tape the forward value
is computed and nothing is recorded, so the same code path serves both
inference and differentiation.  Accumulation order is fixed by the reverse
walk, which keeps single-threaded runs bit-deterministic.

`gradcheck` certifies an analytic gradient against central differences,
optionally on a seeded coordinate subsample for large parameters, and
reports per-parameter absolute/relative error and cosine alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import DimensionError, NumericError
from .rng import Stream
from .tensor import Tensor, require, require_finite


class Var:
    """A value tracked (or not) by a tape; wraps one ndarray of any shape."""

    __slots__ = ("value", "tape", "name")

    def __init__(self, value: np.ndarray, tape=None, name=None):
        self.value = np.asarray(value)
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"


@dataclass
class _Node:
    out: Var
    parents: tuple
    vjp: object  # callable grad -> tuple of parent grads (None allowed)
    op: str


class Tape:
    """Ordered record of executed operations plus the named leaves."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[str, Var] = {}

    def leaf(self, value, name: str) -> Var:
        """Register a named learnable leaf on this tape."""
        if name in self._leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        v = Var(np.asarray(value), tape=self, name=name)
        require_finite(v.value, f"leaf {name!r}")
        self._leaves[name] = v
        return v

    @property
    def leaves(self) -> dict:
        return dict(self._leaves)

    def _record(self, value, parents, vjp, op: str) -> Var:
        out = Var(value, tape=self)
        self._nodes.append(_Node(out, tuple(parents), vjp, op))
        return out

    def backward(self, output: Var, seed=None) -> dict:
        """Accumulate gradients from `output` back to every named leaf.

        `seed` defaults to ones of the output shape.  Leaves that the
        output does not depend on receive zero gradients.
        """
        if not self._nodes:
            raise ValueError("cannot run backward on an empty tape")
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        if seed is None:
            seed = np.ones_like(output.value)
        else:
            seed = np.asarray(seed, dtype=output.value.dtype)
            require(seed.shape == output.value.shape,
                    f"seed shape {seed.shape} must match output shape "
                    f"{output.value.shape}")
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if parent is None or pg is None:
                    continue
                if pg.shape != parent.value.shape:
                    raise DimensionError(
                        f"gradient shape {pg.shape} does not match value "
                        f"shape {parent.value.shape} at op {node.op!r}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = {}
        for name, leaf in self._leaves.items():
            g = grads.get(id(leaf))
            out[name] = g if g is not None else np.zeros_like(leaf.value)
        return out


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    if isinstance(x, Tensor):
        return Var(x.data)
    return Var(np.asarray(x, dtype=np.float64)
               if not isinstance(x, np.ndarray) else x)


def _tape_of(*vars_) -> Tape | None:
    tape = None
    for v in vars_:
        if v is None or v.tape is None:
            continue
        if tape is None:
            tape = v.tape
        elif tape is not v.tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _apply(value, parents, vjp_builder, op: str) -> Var:
    tape = _tape_of(*parents)
    if tape is None:
        return Var(value)
    return tape._record(value, parents, vjp_builder(), op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and structural ops -----------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    value = a.value + b.value

    def build():
        return lambda g: (_unbroadcast(g, a.value.shape),
                          _unbroadcast(g, b.value.shape))
    return _apply(value, (a, b), build, "add")


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    value = a.value - b.value

    def build():
        return lambda g: (_unbroadcast(g, a.value.shape),
                          _unbroadcast(-g, b.value.shape))
    return _apply(value, (a, b), build, "sub")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    value = a.value * b.value

    def build():
        av, bv = a.value, b.value
        return lambda g: (_unbroadcast(g * bv, av.shape),
                          _unbroadcast(g * av, bv.shape))
    return _apply(value, (a, b), build, "mul")


def neg(a) -> Var:
    a = as_var(a)

    def build():
        return lambda g: (-g,)
    return _apply(-a.value, (a,), build, "neg")


def scale(a, k: float) -> Var:
    a = as_var(a)
    k = float(k)

    def build():
        return lambda g: (g * k,)
    return _apply(a.value * k, (a,), build, "scale")


def sum_all(a) -> Var:
    a = as_var(a)

    def build():
        shape, dtype = a.value.shape, a.value.dtype
        return lambda g: (np.full(shape, g, dtype=dtype),)
    return _apply(np.asarray(a.value.sum()), (a,), build, "sum_all")


def mean_axes(a, axes, keepdims: bool = True) -> Var:
    a = as_var(a)
    axes = tuple(axes)
    value = a.value.mean(axis=axes, keepdims=keepdims)
    count = int(np.prod([a.value.shape[i] for i in axes]))

    def build():
        shape = a.value.shape

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g / count, shape).copy(),)
        return vjp
    return _apply(value, (a,), build, "mean_axes")


def amax_axes(a, axes, keepdims: bool = True) -> Var:
    a = as_var(a)
    axes = tuple(axes)
    value = a.value.max(axis=axes, keepdims=keepdims)

    def build():
        av = a.value
        vkeep = av.max(axis=axes, keepdims=True)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            mask = (av == vkeep).astype(av.dtype)
            counts = mask.sum(axis=axes, keepdims=True)
            return ((mask / counts) * g,)
        return vjp
    return _apply(value, (a,), build, "amax_axes")


def reshape(a, shape) -> Var:
    a = as_var(a)
    shape = tuple(shape)
    value = a.value.reshape(shape)

    def build():
        orig = a.value.shape
        return lambda g: (g.reshape(orig),)
    return _apply(value, (a,), build, "reshape")


def transpose(a, axes) -> Var:
    a = as_var(a)
    axes = tuple(axes)
    value = np.ascontiguousarray(a.value.transpose(axes))

    def build():
        inverse = tuple(np.argsort(axes))
        return lambda g: (np.ascontiguousarray(g.transpose(inverse)),)
    return _apply(value, (a,), build, "transpose")


def concat(parts, axis: int = 1) -> Var:
    parts = [as_var(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=axis)

    def build():
        sizes = [p.value.shape[axis] for p in parts]
        bounds = np.cumsum([0] + sizes)

        def vjp(g):
            sl = [slice(None)] * g.ndim
            out = []
            for i in range(len(sizes)):
                sl[axis] = slice(bounds[i], bounds[i + 1])
                out.append(np.ascontiguousarray(g[tuple(sl)]))
            return tuple(out)
        return vjp
    return _apply(value, tuple(parts), build, "concat")


def split(a, sizes, axis: int = 1) -> list:
    """Split into consecutive blocks along `axis`; each block is its own Var."""
    a = as_var(a)
    sizes = list(sizes)
    require(sum(sizes) == a.value.shape[axis],
            f"split sizes {sizes} must sum to {a.value.shape[axis]} "
            f"along axis {axis}")
    outs = []
    start = 0
    for s in sizes:
        sl = [slice(None)] * a.value.ndim
        sl[axis] = slice(start, start + s)
        piece = np.ascontiguousarray(a.value[tuple(sl)])

        def build(start=start, s=s):
            shape = a.value.shape

            def vjp(g):
                full = np.zeros(shape, dtype=g.dtype)
                fsl = [slice(None)] * len(shape)
                fsl[axis] = slice(start, start + s)
                full[tuple(fsl)] = g
                return (full,)
            return vjp
        outs.append(_apply(piece, (a,), build, "split"))
        start += s
    return outs


def stack_last(a, b) -> Var:
    """Stack two equal-shape values along a new trailing axis of size 2."""
    a, b = as_var(a), as_var(b)
    require(a.value.shape == b.value.shape,
            f"stack_last operands must share shape, got {a.value.shape} "
            f"vs {b.value.shape}")
    value = np.stack([a.value, b.value], axis=-1)

    def build():
        return lambda g: (np.ascontiguousarray(g[..., 0]),
                          np.ascontiguousarray(g[..., 1]))
    return _apply(value, (a, b), build, "stack_last")


# -- activations -------------------------------------------------------------

def gelu(a) -> Var:
    a = as_var(a)
    value = tc.gelu_raw(a.value)

    def build():
        av = a.value
        return lambda g: (g * tc.gelu_grad(av),)
    return _apply(value, (a,), build, "gelu")


def sigmoid(a) -> Var:
    a = as_var(a)
    value = tc.sigmoid_raw(a.value)

    def build():
        return lambda g: (g * tc.sigmoid_grad_from_value(value),)
    return _apply(value, (a,), build, "sigmoid")


def silu(a) -> Var:
    a = as_var(a)
    value = tc.silu_raw(a.value)

    def build():
        av = a.value
        return lambda g: (g * tc.silu_grad(av),)
    return _apply(value, (a,), build, "silu")


# -- structured kernels ------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Var:
    x, w = as_var(x), as_var(w)
    b = as_var(b) if b is not None else None
    value = tc.conv2d_raw(x.value, w.value,
                          b.value if b is not None else None, stride, padding)

    def build():
        xv, wv = x.value, w.value

        def vjp(g):
            gx, gw, gb = tc.conv2d_grads(g, xv, wv, stride, padding,
                                         with_bias=b is not None)
            return (gx, gw, gb)
        return vjp
    return _apply(value, (x, w, b), build, "conv2d")


def depthwise_conv2d(x, w) -> Var:
    x, w = as_var(x), as_var(w)
    value = tc.depthwise_conv2d_raw(x.value, w.value)

    def build():
        xv, wv = x.value, w.value

        def vjp(g):
            return tc.depthwise_conv2d_grads(g, xv, wv)
        return vjp
    return _apply(value, (x, w), build, "depthwise_conv2d")


def bilinear_sample(x, grid) -> Var:
    """Sample x at fractional grid coordinates; differentiable in both.

    The coordinate gradient uses subgradient zero outside the border and
    is undefined on integer lattice lines; callers keep sample points off
    the lattice when they need coordinate gradients.
    """
    x = as_var(x)
    grid = as_var(grid)
    value = tc.bilinear_sample_raw(x.value, grid.value)

    def build():
        xv, gv = x.value, grid.value

        def vjp(g):
            return tc.bilinear_sample_grads(g, xv, gv, True, True)
        return vjp
    return _apply(value, (x, grid), build, "bilinear_sample")


# -- gradient checking -------------------------------------------------------

@dataclass
class ParamReport:
    param: str
    max_abs_err: float
    max_rel_err: float
    cosine: float
    passed: bool

    def as_dict(self) -> dict:
        return {"param": self.param, "max_abs_err": self.max_abs_err,
                "max_rel_err": self.max_rel_err, "cosine": self.cosine,
                "pass": self.passed}


@dataclass
class GradReport:
    """Comparison of analytic tape gradients against central differences.

    Relative error uses the denominator max(|analytic|, |numeric|, 1e-12).
    Coordinates where both gradients are below `abs_floor` count toward the
    absolute error only; central differences at that magnitude are pure
    cancellation noise and would make the ratio meaningless.
    """
    params: list = field(default_factory=list)
    eps: float = 1e-5
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    def as_dict(self) -> dict:
        return {"eps": self.eps, "tol": self.tol, "pass": self.passed,
                "params": [p.as_dict() for p in self.params]}


def _loss_value(fn, params: dict) -> float:
    out = fn({k: Var(v) for k, v in params.items()})
    value = out.value if isinstance(out, Var) else np.asarray(out)
    require(value.size == 1,
            f"gradcheck closure must return a scalar, got shape {value.shape}")
    loss = float(value.reshape(()))
    if not np.isfinite(loss):
        raise NumericError("gradcheck closure produced a non-finite loss")
    return loss


def gradcheck(fn, params: dict, eps: float = 1e-5, tol: float = 1e-4,
              max_coords: int = 64, seed: int = 0,
              abs_floor: float = 1e-7) -> GradReport:
    """Certify d(fn)/d(params) against central differences.

    `fn` maps a dict of Vars (same keys as `params`) to a scalar Var.  For
    parameters larger than `max_coords` a seeded subsample of coordinates
    (at least 64) is checked.  The report flags tolerance failures instead
    of raising.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in params.items()}
    out = fn(leaves)
    require(out.value.size == 1,
            f"gradcheck closure must return a scalar, got {out.value.shape}")
    if not np.isfinite(out.value).all():
        raise NumericError("gradcheck closure produced a non-finite loss")
    analytic = tape.backward(out)

    picker = Stream(seed)
    max_coords = max(64, int(max_coords))
    report = GradReport(eps=eps, tol=tol)
    work = {k: v.copy() for k, v in params.items()}
    for name in params:
        theta = work[name]
        size = theta.size
        idx = (np.arange(size) if size <= max_coords
               else picker.choice(size, max_coords))
        a_vals = analytic[name].reshape(-1)[idx]
        n_vals = np.empty_like(a_vals)
        flat = theta.reshape(-1)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _loss_value(fn, work)
            flat[i] = orig - eps
            f_minus = _loss_value(fn, work)
            flat[i] = orig
            n_vals[j] = (f_plus - f_minus) / (2.0 * eps)
        abs_err = np.abs(a_vals - n_vals)
        denom = np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), 1e-12)
        magnitude = np.maximum(np.abs(a_vals), np.abs(n_vals))
        rel = np.where(magnitude > abs_floor, abs_err / denom, 0.0)
        na, nn = np.linalg.norm(a_vals), np.linalg.norm(n_vals)
        if na == 0.0 and nn == 0.0:
            cosine = 1.0
        elif na == 0.0 or nn == 0.0:
            cosine = 0.0
        else:
            cosine = float(np.dot(a_vals, n_vals) / (na * nn))
        max_rel = float(rel.max()) if rel.size else 0.0
        report.params.append(ParamReport(
            param=name,
            max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
            max_rel_err=max_rel,
            cosine=cosine,
            passed=bool(max_rel <= tol),
        ))
    return report
