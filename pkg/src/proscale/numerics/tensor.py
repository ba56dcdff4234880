"""Dense tensors with reverse-mode gradients for a small, fixed op set.

Every op returns a new :class:`Tensor`; inputs are never modified. When any
input requires gradients the result records its parents and a backward
closure, and :func:`grad` walks that graph in reverse topological order.
The accumulation buffer lives inside a single :func:`grad` call, so
independent forward/backward passes never share mutable state.
"""

from __future__ import annotations

from dataclasses import fields, is_dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NumericError, ValidationError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Immutable N-d float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES else np.float64
        dtype = np.dtype(dtype)
        if dtype not in FLOAT_DTYPES:
            raise ValidationError(f"unsupported dtype {dtype}; expected float32 or float64")
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if any(n <= 0 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return _wrap(self.data, (), None, "detach")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def backward(self, seed=None) -> None:
        """Populate ``.grad`` on every leaf that requires gradients."""
        leaves = [t for t in _topo_order(self) if t.requires_grad and not t._parents]
        for leaf, g in zip(leaves, grad(self, leaves, seed)):
            leaf.grad = g


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def constant(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data), dtype=dtype)


def _wrap(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn | None, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    if not np.isfinite(data).all():
        raise NumericError(f"{op}: produced non-finite values")
    data = np.ascontiguousarray(data)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_dtypes(op: str, *tensors: Tensor) -> np.dtype:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) != 1:
        raise DimensionError(f"{op}: dtype mismatch {sorted(d.name for d in dtypes)}")
    return dtypes.pop()


# ---------------------------------------------------------------------------
# gradient engine


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Gradients of ``sum(seed * output)`` with respect to each of ``inputs``.

    ``seed`` defaults to ones. Inputs that do not influence the output get a
    zero gradient.
    """
    if seed is None:
        seed = np.ones(output.shape, dtype=output.dtype)
    seed = np.asarray(seed, dtype=output.dtype)
    if seed.shape != output.shape:
        raise DimensionError(f"seed shape {seed.shape} does not match output {output.shape}")
    tape: dict[int, np.ndarray] = {id(output): seed}
    if output.requires_grad:
        for node in reversed(_topo_order(output)):
            g = tape.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.isfinite(pg).all():
                    raise NumericError(f"backward of {node.op}: non-finite gradient")
                key = id(parent)
                tape[key] = tape[key] + pg if key in tape else pg
    return [
        np.array(tape[id(t)], dtype=t.dtype) if id(t) in tape else np.zeros(t.shape, dtype=t.dtype)
        for t in inputs
    ]


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _check_dtypes("matmul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _wrap(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    parents = (x, weight) if bias is None else (x, weight, bias)
    _check_dtypes("linear", *parents)
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ wd.T, xd.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _wrap(out, parents, backward, "linear")


# ---------------------------------------------------------------------------
# normalisation


def _axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    axis %= x.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"{op}: empty axis {axis}")
    return axis


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _wrap(y, (x,), backward, "softmax")


def layernorm(x: Tensor, eps: float = 1e-5, gamma: Tensor | None = None, beta: Tensor | None = None) -> Tensor:
    """Normalise over the last axis using the population variance."""
    if eps <= 0:
        raise ValidationError("layernorm: eps must be positive")
    c = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.shape != (c,):
            raise DimensionError(f"layernorm: {name} shape {p.shape} != ({c},)")
    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    _check_dtypes("layernorm", *parents)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centred = xd - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        lead = tuple(range(xd.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return _wrap(out, parents, backward, "layernorm")


# ---------------------------------------------------------------------------
# spatial ops


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Sample an (H, W, C) map at normalised (x, y) points.

    Pixel (i, j) is centred at ((j + 0.5) / W, (i + 0.5) / H). Taps that
    fall outside the map read as zero, so points well outside [0, 1]^2
    return zeros.
    """
    if fmap.ndim != 3:
        raise DimensionError(f"bilinear_sample: map must be (H, W, C), got {fmap.shape}")
    if points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"bilinear_sample: points must be (N, 2), got {points.shape}")
    _check_dtypes("bilinear_sample", fmap, points)
    h, w, _ = fmap.shape
    md = fmap.data
    x = points.data[:, 0] * w - 0.5
    y = points.data[:, 1] * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    taps = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi, xi = y0 + dy, x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc, xc = np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)
        vals = md[yc, xc] * valid[:, None]
        taps.append((yc, xc, valid, vals))
    (_, _, _, v00), (_, _, _, v01), (_, _, _, v10), (_, _, _, v11) = taps
    out = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy

    def backward(g):
        gmap = np.zeros_like(md)
        weights = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
        for (yc, xc, valid, _), wgt in zip(taps, weights):
            contrib = g * (wgt * valid[:, None])
            np.add.at(gmap, (yc, xc), contrib)
        dval_dx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
        dval_dy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
        gpts = np.stack([(g * dval_dx).sum(axis=1) * w, (g * dval_dy).sum(axis=1) * h], axis=1)
        return gmap, gpts

    return _wrap(out, (fmap, points), backward, "bilinear_sample")


def _windows(arr: np.ndarray, kernel: int, fill: float) -> np.ndarray:
    """Stack the kernel*kernel shifted neighbourhoods of an (H, W, C) array."""
    r = kernel // 2
    h, w = arr.shape[:2]
    padded = np.pad(arr, ((r, r), (r, r), (0, 0)), constant_values=fill)
    return np.stack([padded[dy:dy + h, dx:dx + w] for dy in range(kernel) for dx in range(kernel)])


def _check_pool(fmap: Tensor, kernel: int, stride: int, op: str) -> None:
    if fmap.ndim != 3:
        raise DimensionError(f"{op}: map must be (H, W, C), got {fmap.shape}")
    if kernel < 1 or kernel % 2 == 0:
        raise ValidationError(f"{op}: kernel must be a positive odd integer, got {kernel}")
    if stride != 1:
        raise ValidationError(f"{op}: only stride 1 is supported, got {stride}")


def maxpool2d(fmap: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Same-size max pooling; out-of-bounds cells never take part in the max."""
    _check_pool(fmap, kernel, stride, "maxpool2d")
    h, w, c = fmap.shape
    # -inf padding cannot win: every window contains its in-bounds centre.
    wins = _windows(fmap.data, kernel, -np.inf)
    arg = wins.argmax(axis=0)
    out = np.take_along_axis(wins, arg[None], axis=0)[0]

    def backward(g):
        r = kernel // 2
        dy, dx = np.divmod(arg, kernel)
        ii, jj, cc = np.indices((h, w, c))
        gmap = np.zeros(fmap.shape, dtype=g.dtype)
        np.add.at(gmap, (ii + dy - r, jj + dx - r, cc), g)
        return (gmap,)

    return _wrap(out, (fmap,), backward, "maxpool2d")


def avgpool2d(fmap: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Same-size average pooling over in-bounds cells only."""
    _check_pool(fmap, kernel, stride, "avgpool2d")
    h, w, _ = fmap.shape
    counts = _windows(np.ones((h, w, 1), dtype=fmap.dtype), kernel, 0.0).sum(axis=0)
    out = _windows(fmap.data, kernel, 0.0).sum(axis=0) / counts

    def backward(g):
        r = kernel // 2
        spread = np.pad(g / counts, ((r, r), (r, r), (0, 0)))
        gmap = np.zeros(fmap.shape, dtype=g.dtype)
        for dy in range(kernel):
            for dx in range(kernel):
                gmap += spread[2 * r - dy:2 * r - dy + h, 2 * r - dx:2 * r - dx + w]
        return (gmap,)

    return _wrap(out, (fmap,), backward, "avgpool2d")


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_axis(a: Tensor, b: Tensor, op: str) -> int | None:
    """Return None for equal shapes, else which argument is the (K, 1) factor."""
    if a.shape == b.shape:
        return None
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        if b.shape[1] == 1:
            return 1
        if a.shape[1] == 1:
            return 0
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return g if g.shape == shape else g.sum(axis=1, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_axis(a, b, "add")
    _check_dtypes("add", a, b)

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _wrap(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_axis(a, b, "mul")
    _check_dtypes("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _wrap(ad * bd, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _wrap(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd >= 0
    ez = np.exp(-np.abs(xd))
    y = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(x.dtype)

    def backward(g):
        return (g * y * (1 - y),)

    return _wrap(y, (x,), backward, "sigmoid")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _wrap(x.data * x.dtype.type(factor), (x,), backward, "scale")


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid, "scale": scale}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch by name to add, mul, relu, sigmoid or scale."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValidationError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# structural plumbing


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {shape}")
    src = x.shape

    def backward(g):
        return (g.reshape(src),)

    return _wrap(x.data.reshape(shape), (x,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    _check_dtypes("concat", *tensors)
    axis = _axis(tensors[0], axis, "concat")
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _wrap(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing."""
    out = x.data[key]
    if out.ndim == 0:
        out = out.reshape(1)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[key] += g.reshape(x.data[key].shape)
        return (gx,)

    return _wrap(np.array(out), (x,), backward, "index")


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        src = x.shape

        def backward(g):
            return (np.broadcast_to(g.reshape(()), src).copy(),)

        return _wrap(np.array([x.data.sum()]), (x,), backward, "sum")
    axis = _axis(x, axis, "sum")
    out = x.data.sum(axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g.reshape(out.shape), axis), x.shape).copy(),)

    return _wrap(out, (x,), backward, "sum")


def broadcast_rows(row: Tensor, n: int) -> Tensor:
    """Repeat a (C,) vector into an (n, C) matrix, differentiably."""
    if row.ndim != 1:
        raise DimensionError(f"broadcast_rows: expected a vector, got {row.shape}")
    ones = Tensor(np.ones((n, 1)), dtype=row.dtype)
    return matmul(ones, reshape(row, (1, row.shape[0])))


# ---------------------------------------------------------------------------
# parameter trees


def tree_leaves(obj) -> list[Tensor]:
    """Collect the Tensors inside nested dataclasses, lists, tuples and dicts."""
    if isinstance(obj, Tensor):
        return [obj]
    if is_dataclass(obj) and not isinstance(obj, type):
        return [leaf for f in fields(obj) for leaf in tree_leaves(getattr(obj, f.name))]
    if isinstance(obj, (list, tuple)):
        return [leaf for item in obj for leaf in tree_leaves(item)]
    if isinstance(obj, dict):
        return [leaf for k in sorted(obj) for leaf in tree_leaves(obj[k])]
    return []


def tree_replace(obj, leaves: Iterable[Tensor]):
    """Rebuild ``obj`` with its Tensors replaced, in :func:`tree_leaves` order."""
    it = iter(leaves)

    def rebuild(node):
        if isinstance(node, Tensor):
            return next(it)
        if is_dataclass(node) and not isinstance(node, type):
            return replace(node, **{f.name: rebuild(getattr(node, f.name)) for f in fields(node) if f.init})
        if isinstance(node, list):
            return [rebuild(item) for item in node]
        if isinstance(node, tuple):
            return tuple(rebuild(item) for item in node)
        if isinstance(node, dict):
            return {k: rebuild(node[k]) for k in sorted(node)}
        return node

    return rebuild(obj)
