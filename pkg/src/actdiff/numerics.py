"""Dense tensors with a reverse-mode tape, plus the forward primitives the model uses.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape nothing is recorded, so inference runs on plain numpy arrays.

    >>> import numpy as np
    >>> x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = tensor_sum(x * x)
    >>> tape.backward(loss, {"x": x})["x"]
    array([ 2., -4.,  6.])
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

__all__ = [
    "NumericsError",
    "Tensor",
    "Tape",
    "RelPosBias",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "relu",
    "exp",
    "log",
    "square",
    "clamp",
    "tensor_sum",
    "tensor_mean",
    "row_sum",
    "softmax",
    "concat",
    "rows",
    "conv1d_dilated",
    "windowed_attention",
    "instance_norm",
    "backward",
    "finite_diff_check",
]


class NumericsError(FloatingPointError):
    """Raised when an op produces NaN/Inf or a tape is misused."""


class Tensor:
    """A numpy array with an optional gradient slot.

    ``requires_grad`` marks learnable leaves and anything computed from them
    while a tape is recording.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype or np.float64)
    return Tensor(arr)


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Use as a context manager; ops executed inside are appended in execution
    order, which is already a topological order. A tape can be consumed by
    :meth:`backward` exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict:
        """Accumulate d(loss)/d(leaf) for every leaf; return grads for ``params``.

        Leaves that the loss does not depend on get exact zeros. Each leaf's
        ``.grad`` is also set.
        """
        if self.consumed:
            raise NumericsError("tape already consumed")
        if loss.data.size != 1:
            raise NumericsError(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent._tape is None:
                    leaves[key] = parent
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if id(loss) in grads and loss._tape is None:
            leaves[id(loss)] = loss

        for key, leaf in leaves.items():
            leaf.grad = grads.get(key, np.zeros_like(leaf.data))
        out = {}
        if params is not None:
            for name, p in params.items():
                g = grads.get(id(p))
                if g is None:
                    g = np.zeros_like(p.data)
                p.grad = g
                out[name] = g
        self.nodes = []
        return out


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict:
    """Run the backward pass on the tape that recorded ``loss``."""
    tape = loss._tape
    if tape is None:
        raise NumericsError("loss was not produced under a recording tape")
    return tape.backward(loss, params)


def _check_finite(arr: np.ndarray, op: str):
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by {op}")


def _record(op: str, out_data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        tape = _ACTIVE[-1]
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, parents, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        "mul", ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for x of shape (T, D_in), w (D_in, D_out), b (D_out,)."""
    xd, wd = x.data, w.data
    y = xd @ wd
    if b is None:
        return _record("linear", y, (x, w), lambda g: (g @ wd.T, xd.T @ g))
    y = y + b.data
    return _record("linear", y, (x, w, b), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _record("relu", np.where(on, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * on,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _record("log", y, (x,), lambda g: (g / xd,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _record("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; the gradient is zero wherever the clip is active."""
    xd = x.data
    y = np.clip(xd, lo, hi)
    inside = y == xd
    return _record("clamp", y, (x,), lambda g: (g * inside,))


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _record(
        "mean", np.asarray(x.data.mean()), (x,),
        lambda g: (np.full(shape, g / n, dtype=x.dtype),),
    )


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last axis: (T, D) -> (T,)."""
    return _record("row_sum", x.data.sum(axis=-1), (x,), lambda g: (np.repeat(g[..., None], x.shape[-1], axis=-1),))


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (x,), bw)


def concat(xs: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for i in range(len(xs)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _record("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw)


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``x[start:stop]``."""
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _record("rows", x.data[start:stop].copy(), (x,), bw)


# -- sequence primitives ----------------------------------------------------


def conv1d_dilated(x: Tensor, kernel: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """Same-length 1-D convolution with zero padding.

    ``x`` is (T, C_in), ``kernel`` is (k, C_in, C_out) with k odd, ``bias`` is
    (C_out,). Output row t sums ``x[t + (j - (k-1)/2) * dilation] @ kernel[j]``.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ValueError("conv1d_dilated expects x (T, C_in) and kernel (k, C_in, C_out)")
    k, c_in, c_out = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if x.shape[1] != c_in or bias.shape != (c_out,):
        raise ValueError(f"shape mismatch: x {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    T = x.shape[0]
    pad = (k - 1) // 2 * dilation
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    wd = kernel.data
    y = np.broadcast_to(bias.data, (T, c_out)).copy()
    for j in range(k):
        y += xp[j * dilation: j * dilation + T] @ wd[j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for j in range(k):
            s = j * dilation
            gw[j] = xp[s: s + T].T @ g
            gxp[s: s + T] += g @ wd[j].T
        return gxp[pad: pad + T], gw, g.sum(axis=0)

    return _record("conv1d_dilated", y, (x, kernel, bias), bw)


class RelPosBias:
    """Learnable scalar bias per signed query-key offset, clipped at ``w_max``.

    ``table[w_max + d]`` holds the bias for offset ``d = i - j`` (query minus
    key). Offsets beyond ``w_max`` reuse the boundary entries.
    """

    def __init__(self, table: Tensor, w_max: int):
        if table.shape != (2 * w_max + 1,):
            raise ValueError(f"bias table must have {2 * w_max + 1} entries, got {table.shape}")
        self.table = table
        self.w_max = w_max

    @classmethod
    def zeros(cls, w_max: int, dtype=np.float64, requires_grad: bool = True) -> "RelPosBias":
        return cls(Tensor(np.zeros(2 * w_max + 1, dtype=dtype), requires_grad=requires_grad), w_max)

    def index(self, offsets: np.ndarray) -> np.ndarray:
        return self.w_max + np.clip(offsets, -self.w_max, self.w_max)

    def lookup(self, offsets) -> np.ndarray:
        return self.table.data[self.index(np.asarray(offsets))]


def windowed_attention(q: Tensor, k: Tensor, v: Tensor, window: int, bias: RelPosBias | None = None) -> Tensor:
    """Single-head local attention.

    Query i sees keys j with ``|i - j| <= window // 2``. Scores are
    ``q_i . k_j / sqrt(D) + bias[i - j]``; keys outside the window or the
    sequence are excluded from the softmax.
    """
    if window < 1:
        raise ValueError("window must be a positive integer")
    if q.shape != k.shape or q.data.ndim != 2 or v.shape[0] != k.shape[0]:
        raise ValueError(f"shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    T, D = q.shape
    half = min(window // 2, T - 1)
    W = 2 * half + 1
    rel = np.arange(W) - half  # key offset j - i
    idx = np.arange(T)[:, None] + np.arange(W)[None, :]
    valid = (idx >= half) & (idx < T + half)
    kp = np.pad(k.data, ((half, half), (0, 0)))
    vp = np.pad(v.data, ((half, half), (0, 0)))
    Kw, Vw = kp[idx], vp[idx]
    inv = 1.0 / np.sqrt(D)
    scores = np.einsum("td,twd->tw", q.data, Kw) * inv
    parents = [q, k, v]
    if bias is not None:
        tidx = bias.index(-rel)
        scores = scores + bias.table.data[tidx][None, :]
        parents.append(bias.table)
    scores = np.where(valid, scores, -np.inf)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.where(valid, np.exp(scores), 0.0)
    P = (e / e.sum(axis=1, keepdims=True)).astype(q.dtype)
    out = np.einsum("tw,twd->td", P, Vw)
    qd = q.data

    def bw(g):
        dP = np.einsum("td,twd->tw", g, Vw)
        dS = P * (dP - (P * dP).sum(axis=1, keepdims=True))
        dq = np.einsum("tw,twd->td", dS, Kw) * inv
        dKw = dS[:, :, None] * qd[:, None, :] * inv
        dVw = P[:, :, None] * g[:, None, :]
        gkp = np.zeros_like(kp)
        gvp = np.zeros_like(vp)
        for w in range(W):
            gkp[w: w + T] += dKw[:, w]
            gvp[w: w + T] += dVw[:, w]
        grads = [dq, gkp[half: half + T], gvp[half: half + T]]
        if bias is not None:
            gt = np.zeros_like(bias.table.data)
            np.add.at(gt, tidx, dS.sum(axis=0))
            grads.append(gt)
        return tuple(grads)

    return _record("windowed_attention", out, tuple(parents), bw)


def instance_norm(x: Tensor, eps: float = 1e-5, weight: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Normalize each channel over time, optionally followed by an affine map."""
    xd = x.data
    T = xd.shape[0]
    mu = xd.mean(axis=0)
    xc = xd - mu
    var = (xc * xc).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
    if T == 1 or not np.isfinite(xhat).all():
        # zero variance with eps == 0: the centred input is all zeros
        xhat = np.where(np.isfinite(xhat), xhat, 0.0)
        inv = np.where(np.isfinite(inv), inv, 0.0)
    y = xhat
    parents = [x]
    if weight is not None:
        y = y * weight.data + bias.data
        parents += [weight, bias]

    def bw(g):
        gh = g * weight.data if weight is not None else g
        gx = inv * (gh - gh.mean(axis=0) - xhat * (gh * xhat).mean(axis=0))
        if weight is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record("instance_norm", y.astype(xd.dtype), tuple(parents), bw)


# -- gradient checking ------------------------------------------------------


def finite_diff_check(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-6,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps a dict of leaf tensors to a scalar tensor and must be
    deterministic. The error per coordinate is
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``. With ``n_samples`` set, that
    many coordinates per parameter are checked instead of all of them.
    """
    leaves = {name: Tensor(np.array(arr, dtype=np.float64), requires_grad=True) for name, arr in params.items()}
    with Tape() as tape:
        loss = fn(leaves)
    _check_finite(loss.data, "finite_diff_check fn")
    grads = tape.backward(loss, leaves)

    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, leaf in leaves.items():
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if n_samples is not None and n_samples < flat.size:
            coords = rng.choice(flat.size, size=n_samples, replace=False)
        g_ad = grads[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(fn(leaves).data)
            flat[c] = orig - h
            down = float(fn(leaves).data)
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericsError("non-finite function value during finite differences")
            g_fd = (up - down) / (2.0 * h)
            err = abs(g_ad[c] - g_fd) / max(1.0, abs(g_ad[c]), abs(g_fd))
            worst = max(worst, err)
    return worst
