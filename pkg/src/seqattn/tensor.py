"""Dense tensors with a reverse-mode differentiation tape.

Every differentiable operation appends a node to the active :class:`Tape`;
:func:`backward` walks the tape in reverse and accumulates gradients into
every tensor that requires them.  Values are float64 numpy arrays.

Broadcasting is deliberately not implicit: binary operations accept two
tensors of identical shape, or a tensor and a scalar.  Where a sequence
model needs a vector repeated across positions, :func:`expand` does it
explicitly so each gradient rule stays easy to audit.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class InvalidTargetError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    nodes: list[Node] = field(default_factory=list)

    def record(self, op, output, inputs, backward_fn) -> None:
        output._tape = self
        self.nodes.append(Node(output, tuple(inputs), backward_fn, op))

    def clear(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def backward(self, loss: Tensor, keep: bool = False) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {}
        start = len(self.nodes)
        for k in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[k].output is loss:
                start = k
                break
        else:
            if loss.requires_grad:
                loss.grad = (loss.grad if loss.grad is not None else 0.0) + 1.0
            if not keep:
                self.clear()
            return

        for node in self.nodes[: start + 1]:
            for t in node.inputs:
                if t.requires_grad:
                    touched[id(t)] = t
            touched[id(node.output)] = node.output

        for node in reversed(self.nodes[: start + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            if node.output.requires_grad:
                _accumulate(node.output, g)
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # leaves: anything still holding a gradient was never produced by a node
        for key, g in grads.items():
            _accumulate(touched[key], g)
        for t in touched.values():
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
        if not keep:
            self.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = [Tape()]
        _local.enabled = True
    return _local.tapes


def current_tape() -> Tape:
    return _stack()[-1]


def grad_enabled() -> bool:
    _stack()
    return _local.enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    _stack()
    prev = _local.enabled
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


def backward(loss: Tensor, keep: bool = False) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    tape = loss._tape if loss._tape is not None else current_tape()
    tape.backward(loss, keep=keep)


def _result(op, data, inputs, backward_fn) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        current_tape().record(op, out, inputs, backward_fn)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(x) -> bool:
    return not isinstance(x, Tensor) or x.ndim == 0


# ---------------------------------------------------------------------------
# elementwise


def _binary(op, a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    out = fwd(a.data, b.data)

    def back(g):
        ga, gb = da(g, a.data, b.data), db(g, a.data, b.data)
        if a.ndim == 0 and ga is not None:
            ga = np.sum(ga)
        if b.ndim == 0 and gb is not None:
            gb = np.sum(gb)
        return ga, gb

    return _result(op, out, (a, b), back)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def elementwise(op: str, a, b) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _result("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def activation(op: str, a: Tensor) -> Tensor:
    if op == "sigmoid":
        return sigmoid(a)
    if op == "tanh":
        return tanh(a)
    raise ConfigError(f"unknown activation {op!r}")


# ---------------------------------------------------------------------------
# structural


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a matrix ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _result("matmul", out, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """Basic numpy indexing; gradient is scattered back into a zero array."""
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result("take", np.array(out, dtype=DTYPE), (a,), back)


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed: ids outside [0, {table.shape[0]})")
    out = table.data[ids]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result("embed", out, (table,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim if ref.ndim else 0
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref.shape)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} disagree off axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return np.split(g, bounds, axis=ax)

    return _result("concat", out, tuple(tensors), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _result("stack", out, tuple(tensors), back)


def expand(a: Tensor, n: int, axis: int) -> Tensor:
    """Repeat ``a`` ``n`` times along a new ``axis`` (explicit broadcast)."""
    a = as_tensor(a)
    ax = axis % (a.ndim + 1)
    out = np.repeat(np.expand_dims(a.data, ax), n, axis=ax)
    return _result("expand", out, (a,), lambda g: (g.sum(axis=ax),))


def sum_components(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.full(a.shape, g, dtype=DTYPE),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result("sum", out, (a,), back)


def mean(a: Tensor) -> Tensor:
    return mul(sum_components(a), 1.0 / a.size)


# ---------------------------------------------------------------------------
# probabilistic


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {shape}")
    if not mask.any(axis=-1).all():
        raise DegenerateInputError("every row needs at least one unmasked position")
    return mask


def _masked_softmax(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def masked_softmax(logits: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked positions get exactly zero."""
    logits = as_tensor(logits)
    mask = _check_mask(mask, logits.shape)
    y = _masked_softmax(logits.data, mask)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("masked_softmax", y, (logits,), back)


def masked_log_softmax(x: np.ndarray, mask) -> np.ndarray:
    mask = _check_mask(mask, x.shape)
    z = np.where(mask, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.where(mask, np.exp(z), 0.0).sum(axis=-1, keepdims=True))
    return np.where(mask, z - lse, -np.inf)


def nll_loss(logits: Tensor, target, mask=None) -> Tensor:
    """Negative log-likelihood of ``target`` under a masked softmax.

    ``logits`` is a vector over candidates or a (batch, candidates) matrix;
    a batch returns the mean loss.
    """
    logits = as_tensor(logits)
    batched = logits.ndim == 2
    x = logits.data if batched else logits.data[None, :]
    m = None if mask is None else np.asarray(mask, dtype=bool).reshape(x.shape)
    m = _check_mask(m, x.shape)
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape != (x.shape[0],):
        raise InvalidTargetError(f"expected {x.shape[0]} targets, got {tgt.shape}")
    rows = np.arange(x.shape[0])
    if (tgt < 0).any() or (tgt >= x.shape[1]).any() or not m[rows, tgt].all():
        raise InvalidTargetError(f"target {tgt.tolist()} is out of range or masked")
    logp = masked_log_softmax(x, m)
    out = -logp[rows, tgt].mean()

    def back(g):
        p = np.where(m, np.exp(logp), 0.0)
        p[rows, tgt] -= 1.0
        p *= g / x.shape[0]
        return (p if batched else p[0],)

    return _result("nll_loss", out, (logits,), back)


def dropout(a: Tensor, rate: float, mode: str = "eval", rng=None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown dropout mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("train-mode dropout needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# fused recurrent scan


def _gru_forward(xp, w_h, mask, reverse):
    """Run the recurrence given precomputed input projections ``xp``.

    xp: (B, n, 3h) holding x W_x + b for gates [update, reset, candidate].
    Returns outputs (B, n, h) and a cache for the backward pass.
    """
    bsz, n, three_h = xp.shape
    h = three_h // 3
    u_zr, u_c = w_h[:, : 2 * h], w_h[:, 2 * h :]
    prev = np.zeros((bsz, h), dtype=DTYPE)
    out = np.empty((bsz, n, h), dtype=DTYPE)
    cache = []
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        zr = _sigmoid(xp[:, t, : 2 * h] + prev @ u_zr)
        z, r = zr[:, :h], zr[:, h:]
        rh = r * prev
        c = np.tanh(xp[:, t, 2 * h :] + rh @ u_c)
        new = prev + z * (c - prev)
        m = mask[:, t, None]
        cur = np.where(m, new, prev)
        cache.append((t, prev, z, r, rh, c))
        out[:, t] = cur
        prev = cur
    return out, cache


def gru_scan(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, mask=None, reverse: bool = False) -> Tensor:
    """Apply a GRU across a padded batch of sequences in one tape node.

    x is (B, n, in); w_x is (in, 3h); w_h is (h, 3h); b is (3h,).  Gate
    blocks are ordered update, reset, candidate.  Initial state is zero.
    Where ``mask`` is false the previous state is carried through unchanged.
    """
    x, w_x, w_h, b = (as_tensor(t) for t in (x, w_x, w_h, b))
    if x.ndim != 3:
        raise ShapeError(f"gru_scan expects (batch, time, features), got {x.shape}")
    bsz, n, n_in = x.shape
    h = w_h.shape[0]
    if n == 0:
        raise ShapeError("gru_scan: empty sequence")
    if w_x.shape != (n_in, 3 * h) or w_h.shape != (h, 3 * h) or b.shape != (3 * h,):
        raise ShapeError(
            f"gru_scan: input {x.shape} incompatible with w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}"
        )
    mask = np.ones((bsz, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (bsz, n):
        raise ShapeError(f"gru_scan: mask {mask.shape} does not match {(bsz, n)}")

    xp = x.data @ w_x.data + b.data
    out, cache = _gru_forward(xp, w_h.data, mask, reverse)

    def back(g_out):
        u_zr, u_c = w_h.data[:, : 2 * h], w_h.data[:, 2 * h :]
        d_xp = np.zeros_like(xp)
        d_wh = np.zeros_like(w_h.data)
        carry = np.zeros((bsz, h), dtype=DTYPE)
        for t, prev, z, r, rh, c in reversed(cache):
            dcur = g_out[:, t] + carry
            m = mask[:, t, None]
            dnew = np.where(m, dcur, 0.0)
            dprev = np.where(m, 0.0, dcur) + dnew * (1.0 - z)
            dz = dnew * (c - prev)
            dac = dnew * z * (1.0 - c * c)
            d_rh = dac @ u_c.T
            d_wh[:, 2 * h :] += rh.T @ dac
            dr = d_rh * prev
            dprev += d_rh * r
            dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            d_wh[:, : 2 * h] += prev.T @ dazr
            dprev += dazr @ u_zr.T
            d_xp[:, t, : 2 * h] = dazr
            d_xp[:, t, 2 * h :] = dac
            carry = dprev
        flat = d_xp.reshape(-1, 3 * h)
        d_x = d_xp @ w_x.data.T
        d_wx = x.data.reshape(-1, n_in).T @ flat
        d_b = flat.sum(axis=0)
        return d_x, d_wx, d_wh, d_b

    return _result("gru_scan", out, (x, w_x, w_h, b), back)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_error: float
    tolerance: float
    errors: list[float]

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5, tolerance: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of ``f(*inputs)`` to central differences.

    Error per component is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    with no_grad():
        first = f(*inputs).data.copy()
        second = f(*inputs).data.copy()
    if not np.array_equal(first, second):
        raise ContractError("grad_check: f is not deterministic (train-mode dropout without fixed rng?)")

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
        tape.backward(loss)

    errors = []
    with no_grad():
        for t in inputs:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(f(*inputs).data)
                flat[i] = orig - step
                lo = float(f(*inputs).data)
                flat[i] = orig
                numeric[i] = (hi - lo) / (2 * step)
            a = analytic.reshape(-1)
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
            err = np.abs(a - numeric) / denom
            errors.append(float(err.max()) if err.size else 0.0)
    return GradCheckReport(max(errors) if errors else 0.0, tolerance, errors)
