"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything the encoders and losses need is built from the operations in this
module: matrix products, row softmax, layer normalisation, elementwise math,
gathers and reductions. Arrays are row-major numpy float64 throughout; no GPU,
no mixed precision. Operations record onto the innermost active ``Tape`` when
any input participates in gradients, so forward passes outside a tape carry no
bookkeeping cost.

Broadcasting is limited to the patterns the model uses (bias rows, per-batch
columns, rank-1 injections); gradients un-broadcast by summing the expanded
axes. Batched (3-d) variants of matmul/softmax/layer_norm exist because the
encoder runs all node sequences of a batch in one call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, TapeError

Array = np.ndarray


class Tensor:
    """A dense float64 array plus optional gradient buffer.

    Tensors are immutable by convention after creation; only optimizer steps
    write into ``data``. ``grad`` accumulates across backward passes until
    ``zero_grad`` is called.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph. Shares the underlying buffer."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; every form routes through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Ordered record of differentiable operations for one backward pass.

    Ops executed while the tape is active (``with Tape() as tape:``) append a
    backward closure; closures run in reverse order, which is topological by
    construction. A tape is single use: call ``reset`` before reuse.
    """

    def __init__(self):
        self._entries: list = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, backward_fn) -> None:
        self._entries.append(backward_fn)

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor that fed ``loss``.

        Gradients add into existing buffers; call ``zero_grad`` on parameters
        between optimizer steps.
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for fn in reversed(self._entries):
            fn()

    def reset(self) -> None:
        self._entries.clear()
        self._consumed = False


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, backward_fn) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or not g.flags.owndata else g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` after numpy broadcasting expanded it."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-d x 2-d, batched 3-d x 3-d, or 3-d x 2-d."""
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise DimensionError(f"matmul expects 2-d or 3-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim == 3:
        raise DimensionError(f"matmul does not broadcast a 2-d left operand over batches: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def _bw():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ga.ndim > a.ndim:
                ga = ga.sum(axis=0)
            _accumulate(a, ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if gb.ndim > b.ndim:
                gb = gb.sum(axis=0)
            _accumulate(b, gb)

    _record(out, _bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting; gradients sum back down."""
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add cannot broadcast {a.shape} with {b.shape}") from exc
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def _bw():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    _record(out, _bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul cannot broadcast {a.shape} with {b.shape}") from exc
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def _bw():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    _record(out, _bw)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad * c)

    _record(out, _bw)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad * (a.data > 0.0))

    _record(out, _bw)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad * out.data)

    _record(out, _bw)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log requires strictly positive inputs")
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad / a.data)

    _record(out, _bw)
    return out


def transpose(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dimensions, got {a.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, np.swapaxes(out.grad, -1, -2))

    _record(out, _bw)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad.reshape(a.shape))

    _record(out, _bw)
    return out


def concat_cols(tensors) -> Tensor:
    """Concatenate along the last (feature) axis."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_cols needs at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(
                f"concat_cols leading dimensions differ: {tensors[0].shape} vs {t.shape}"
            )
    data = np.concatenate([t.data for t in tensors], axis=-1)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors))
    offsets = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def _bw():
        g = out.grad
        if g is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accumulate(t, g[..., lo:hi])

    _record(out, _bw)
    return out


def concat_rows(tensors) -> Tensor:
    """Stack 2-d tensors along axis 0."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_rows needs at least one tensor")
    width = tensors[0].shape[-1]
    for t in tensors:
        if t.ndim != 2 or t.shape[-1] != width:
            raise DimensionError(f"concat_rows expects 2-d tensors of width {width}, got {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=0)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors))
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def _bw():
        g = out.grad
        if g is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accumulate(t, g[lo:hi])

    _record(out, _bw)
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a 2-d tensor, kept as a single row."""
    if a.ndim != 2:
        raise DimensionError(f"mean_rows expects a 2-d tensor, got {a.shape}")
    m = a.shape[0]
    out = Tensor(a.data.mean(axis=0, keepdims=True), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, np.broadcast_to(out.grad / m, a.shape))

    _record(out, _bw)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Reduce every element to a scalar (0-d) tensor."""
    out = Tensor(a.data.sum(), requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, np.broadcast_to(out.grad, a.shape))

    _record(out, _bw)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the trailing axis, with row-max subtraction for stability."""
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(data, requires_grad=a.requires_grad)

    def _bw():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        s = out.data
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(a, s * (g - inner))

    _record(out, _bw)
    return out


def logsumexp_rows(a: Tensor) -> Tensor:
    """log(sum(exp(.))) over the trailing axis, keepdims, max-shifted."""
    m = a.data.max(axis=-1, keepdims=True)
    data = m + np.log(np.exp(a.data - m).sum(axis=-1, keepdims=True))
    out = Tensor(data, requires_grad=a.requires_grad)

    def _bw():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        _accumulate(a, g * np.exp(a.data - out.data))

    _record(out, _bw)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the trailing axis to zero mean / unit variance, then affine."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv_std
    out = Tensor(
        xhat * gain.data + bias.data,
        requires_grad=a.requires_grad or gain.requires_grad or bias.requires_grad,
    )

    def _bw():
        g = out.grad
        if g is None:
            return
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, term * inv_std)

    _record(out, _bw)
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d tensor; index array may have any shape.

    Output shape is ``indices.shape + (a.shape[1],)``. The gradient
    scatter-adds into the source rows, so repeated indices accumulate.
    """
    if a.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-d source, got {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"take_rows indices out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx], requires_grad=a.requires_grad)

    def _bw():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx.reshape(-1), g.reshape(-1, a.shape[1]))
        _accumulate(a, ga)

    _record(out, _bw)
    return out


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, 1/(1-p) rescale in training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ConfigError("training-mode dropout needs an explicit rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * mask, requires_grad=a.requires_grad)

    def _bw():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad * mask)

    _record(out, _bw)
    return out


# ---------------------------------------------------------------------------
# construction helpers


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator, requires_grad: bool = True) -> Tensor:
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers aligned with a fixed parameter list."""

    step: int
    m: list[Array]
    v: list[Array]


def init_adam_state(params) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Parameters whose gradient is ``None`` are skipped entirely (no moment
    update, no decay), so a step driven by an all-zero objective is a no-op.
    """
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got {betas}")
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and state must have matching lengths")
    if all(g is None for g in grads):
        return state
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)
    return state
