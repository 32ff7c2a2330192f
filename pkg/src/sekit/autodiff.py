"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: operations record onto a thread-local tape while any input
requires gradients; `backward` consumes the tape in one reverse pass and
frees it. Exactly the operator set needed by the denoising networks and
losses is provided. Broadcasting is supported for elementwise ops (the
gradient is summed back to each operand's shape); everything else treats a
shape mismatch as an error.
"""

from __future__ import annotations

import threading

import numpy as np

# Floor used inside every log and division guard; shared by the losses.
EPSILON = 1e-8

_LN10 = np.log(10.0)

_state = threading.local()


def _enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = _enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Tape:
    """Recording of one forward pass, in creation (topological) order."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: "_Record") -> int:
        self.records.append(record)
        return len(self.records) - 1


class _Record:
    __slots__ = ("parents", "backward", "leaf")

    def __init__(self, parents=(), backward=None, leaf=None):
        self.parents = parents
        self.backward = backward
        self.leaf = leaf


def _active_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _state.tape = tape
    return tape


class Tensor:
    """Dense real array, optionally attached to the recording tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if requires_grad and not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node_on(tape: Tape, t: Tensor) -> int:
    """Node id of `t` on `tape`, registering it as a leaf if needed."""
    if t.tape is tape and t.node is not None:
        return t.node
    node = tape.add(_Record(leaf=t))
    t.tape = tape
    t.node = node
    return node


def _emit(out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Create the op output, recording a tape entry if any input is tracked.

    `inputs` holds Tensors (or None for slots with no gradient path);
    `backward(g)` returns one gradient contribution per slot.
    """
    out = Tensor(out_data)
    if not _enabled():
        return out
    if not any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        return out
    tape = _active_tape()
    parents = tuple(
        _node_on(tape, t) if isinstance(t, Tensor) and t.requires_grad else None
        for t in inputs
    )
    out.requires_grad = True
    out.tape = tape
    out.node = tape.add(_Record(parents=parents, backward=backward))
    return out


def from_op(out_data, inputs, backward) -> Tensor:
    """Hook for building custom primitives outside this module."""
    return _emit(np.asarray(out_data, dtype=np.float64), tuple(inputs), backward)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_op(name: str, a, b, fwd):
    a, b = _wrap(a), _wrap(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as exc:
        raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from exc
    return a, b, out


def add(a, b) -> Tensor:
    a, b, out = _broadcast_op("add", a, b, np.add)
    return _emit(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b, out = _broadcast_op("sub", a, b, np.subtract)
    return _emit(out, (a, b), lambda g: (_sum_to(g, a.shape), -_sum_to(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b, out = _broadcast_op("mul", a, b, np.multiply)

    def backward(g):
        return _sum_to(g * b.data, a.shape), _sum_to(g * a.data, b.shape)

    return _emit(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b, out = _broadcast_op("div", a, b, np.divide)

    def backward(g):
        return _sum_to(g / b.data, a.shape), _sum_to(-g * out / b.data, b.shape)

    return _emit(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(out, (a, b), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def prelu(x, slope) -> Tensor:
    """PReLU with a per-channel slope of shape (C, 1) applied to (C, T)."""
    x, slope = _wrap(x), _wrap(slope)
    pos = x.data > 0
    out = np.where(pos, x.data, slope.data * x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, slope.data)
        gs = _sum_to(g * np.where(pos, 0.0, x.data), slope.shape)
        return gx, gs

    return _emit(out, (x, slope), backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out = np.empty_like(x.data)
    np.exp(-np.abs(x.data), out=out)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))


def sqrt(x) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)
    return _emit(out, (x,), lambda g: (g / (2.0 * out),))


def log10_eps(x) -> Tensor:
    """log10(x + 1e-8); the floor keeps losses finite near zero error."""
    x = _wrap(x)
    shifted = x.data + EPSILON
    return _emit(np.log10(shifted), (x,), lambda g: (g / (shifted * _LN10),))


def mean(x) -> Tensor:
    x = _wrap(x)
    n = x.size
    return _emit(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n),))


def sum(x) -> Tensor:  # noqa: A001 - mirrors the numpy name, used as ad.sum
    x = _wrap(x)
    return _emit(np.sum(x.data), (x,), lambda g: (np.full(x.shape, g),))


def global_layer_norm(x, gain, bias, eps: float = EPSILON) -> Tensor:
    """Normalize over all (channel, time) elements, then apply a per-channel
    affine transform: gain * (x - mu) / sqrt(var + eps) + bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean()
    var = x.data.var()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data * xhat + bias.data

    def backward(g):
        u = g * gain.data
        gx = inv * (u - u.mean() - xhat * np.mean(u * xhat))
        return gx, _sum_to(g * xhat, gain.shape), _sum_to(g, bias.shape)

    return _emit(out, (x, gain, bias), backward)


def _conv_out_len(T: int, K: int, stride: int, dilation: int) -> int:
    span = dilation * (K - 1) + 1
    if T < span:
        raise ValueError(f"conv1d: input length {T} shorter than kernel span {span}")
    return (T - span) // stride + 1


def conv1d(x, w, *, stride: int = 1, dilation: int = 1, groups: int = 1) -> Tensor:
    """1-D convolution, channels-first: x (C_in, T), w (C_out, C_in/groups, K)."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ValueError(f"conv1d: expected 2-D input and 3-D kernel, got {x.shape} and {w.shape}")
    c_in, T = x.shape
    c_out, c_in_g, K = w.shape
    if c_in % groups or c_out % groups or c_in_g != c_in // groups:
        raise ValueError(
            f"conv1d: groups={groups} incompatible with input {x.shape} and kernel {w.shape}"
        )
    t_out = _conv_out_len(T, K, stride, dilation)
    span = stride * (t_out - 1) + 1
    depthwise = groups == c_in and c_out == c_in

    out = np.zeros((c_out, t_out))
    xcols = [x.data[:, k * dilation : k * dilation + span : stride] for k in range(K)]
    if depthwise:
        for k in range(K):
            out += w.data[:, 0, k : k + 1] * xcols[k]
    elif groups == 1:
        for k in range(K):
            out += w.data[:, :, k] @ xcols[k]
    else:
        cg_in, cg_out = c_in // groups, c_out // groups
        for gidx in range(groups):
            rows = slice(gidx * cg_out, (gidx + 1) * cg_out)
            cols = slice(gidx * cg_in, (gidx + 1) * cg_in)
            for k in range(K):
                out[rows] += w.data[rows, :, k] @ xcols[k][cols]

    def backward(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for k in range(K):
            view = gx[:, k * dilation : k * dilation + span : stride]
            if depthwise:
                gw[:, 0, k] = np.sum(g * xcols[k], axis=1)
                view += w.data[:, 0, k : k + 1] * g
            elif groups == 1:
                gw[:, :, k] = g @ xcols[k].T
                view += w.data[:, :, k].T @ g
            else:
                cg_in, cg_out = c_in // groups, c_out // groups
                for gidx in range(groups):
                    rows = slice(gidx * cg_out, (gidx + 1) * cg_out)
                    cols = slice(gidx * cg_in, (gidx + 1) * cg_in)
                    gw[rows, :, k] = g[rows] @ xcols[k][cols].T
                    view[cols] += w.data[rows, :, k].T @ g[rows]
        return gx, gw

    return _emit(out, (x, w), backward)


def conv1d_transpose(x, w, *, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution: x (C_in, T), w (C_in, C_out, K) ->
    (C_out, (T-1)*stride + K), overlap-adding strided kernel copies."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[0] != w.shape[0]:
        raise ValueError(
            f"conv1d_transpose: incompatible input {x.shape} and kernel {w.shape}"
        )
    c_in, T = x.shape
    _, c_out, K = w.shape
    t_out = (T - 1) * stride + K
    span = stride * (T - 1) + 1

    out = np.zeros((c_out, t_out))
    for k in range(K):
        out[:, k : k + span : stride] += w.data[:, :, k].T @ x.data

    def backward(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for k in range(K):
            gcols = g[:, k : k + span : stride]
            gx += w.data[:, :, k] @ gcols
            gw[:, :, k] = x.data @ gcols.T
        return gx, gw

    return _emit(out, (x, w), backward)


def pad1d(x, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    x = _wrap(x)
    if left < 0 or right < 0:
        raise ValueError("pad1d: negative padding")
    widths = [(0, 0)] * (x.data.ndim - 1) + [(left, right)]
    out = np.pad(x.data, widths)
    T = x.shape[-1]
    return _emit(out, (x,), lambda g: (g[..., left : left + T],))


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` elements starting at `start` along `axis`."""
    x = _wrap(x)
    if not (0 <= start and start + length <= x.shape[axis]):
        raise ValueError(f"narrow: [{start}, {start + length}) out of bounds for {x.shape}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _emit(out, (x,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[tuple(slice(None) if d != axis else slice(bounds[i], bounds[i + 1]) for d in range(g.ndim))]
            for i in range(len(parts))
        )

    return _emit(out, tuple(parts), backward)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out = x.data.reshape(shape)
    orig = x.shape
    return _emit(out, (x,), lambda g: (g.reshape(orig),))


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate gradients of a scalar loss into every requires_grad leaf
    on its tape. The tape is consumed; a second backward raises."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise RuntimeError("loss is not attached to a tape (nothing requires gradients)")
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")

    grads: list[np.ndarray | None] = [None] * len(tape)
    grads[loss.node] = np.ones_like(loss.data)
    for node in range(loss.node, -1, -1):
        g = grads[node]
        rec = tape.records[node]
        if g is None or rec.backward is None:
            continue
        for pid, contrib in zip(rec.parents, rec.backward(g)):
            if pid is None or contrib is None:
                continue
            if grads[pid] is None:
                grads[pid] = contrib.copy() if contrib.base is not None else contrib
            else:
                grads[pid] = grads[pid] + contrib

    result: dict[Tensor, np.ndarray] = {}
    for node, rec in enumerate(tape.records):
        if rec.leaf is not None and rec.leaf.requires_grad:
            g = grads[node] if grads[node] is not None else np.zeros_like(rec.leaf.data)
            rec.leaf.grad = g
            result[rec.leaf] = g

    tape.consumed = True
    tape.records = []
    if getattr(_state, "tape", None) is tape:
        _state.tape = None
    return result


def grad_check(f, x: Tensor, n_coords: int = 50, step: float = 1e-5, rng=None) -> float:
    """Worst relative error between autodiff and central finite differences
    of scalar-valued `f` at `n_coords` random coordinates of `x`."""
    rng = np.random.default_rng(0) if rng is None else rng
    probe = Tensor(x.data.copy(), requires_grad=True)
    grads = backward(f(probe))
    g = grads[probe]

    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    worst = 0.0
    flat = x.data.ravel()
    for c in coords:
        delta = np.zeros_like(flat)
        delta[c] = step
        with no_grad():
            fp = float(f(Tensor((flat + delta).reshape(x.shape))).data)
            fm = float(f(Tensor((flat - delta).reshape(x.shape))).data)
        fd = (fp - fm) / (2.0 * step)
        a = g.ravel()[c]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


def grad_check_params(loss_fn, params: dict[str, Tensor], n_coords: int = 50,
                      step: float = 1e-5, rng=None) -> float:
    """Finite-difference check of `loss_fn()` against autodiff gradients,
    sampling coordinates across a whole named-parameter collection."""
    rng = np.random.default_rng(0) if rng is None else rng
    grads = backward(loss_fn())
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.cumsum(sizes) - sizes
    total = int(sizes.sum())

    worst = 0.0
    for flat_idx in rng.choice(total, size=min(n_coords, total), replace=False):
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        p = params[names[which]]
        c = int(flat_idx - offsets[which])
        original = p.data.ravel()[c]
        p.data.ravel()[c] = original + step
        with no_grad():
            fp = float(loss_fn().data)
        p.data.ravel()[c] = original - step
        with no_grad():
            fm = float(loss_fn().data)
        p.data.ravel()[c] = original
        fd = (fp - fm) / (2.0 * step)
        a = grads.get(p, np.zeros_like(p.data)).ravel()[c]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst
