"""Dense float64 tensors with reverse-mode differentiation, plus the two
optimizers used by the taggers (plain SGD, Adam with linear warm-up).

The engine is deliberately small: a Tensor wraps a numpy array and remembers
how it was produced; ``backward`` walks the recorded graph once and adds the
resulting gradients into every participating tensor. Everything runs in
double precision so the finite-difference checks in the test suite can use
tight tolerances.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, TrainingError

Array = np.ndarray


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return arr


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 numpy array. `grad` is allocated on demand and
    accumulates across repeated `backward` calls until explicitly zeroed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(node) into `.grad` of every graph node.

        `self` must be a scalar (size-1) tensor. Gradients add up across
        calls; optimizers zero them after each step.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in order:
            grad_out = flowing.pop(id(node), None)
            if grad_out is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += grad_out
            if node._vjp is None:
                continue
            parent_grads = node._vjp(grad_out)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + g
                else:
                    flowing[key] = g

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor; optimizers report errors by this name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the graph rooted at `root` (iterative)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    return Tensor(
        out,
        _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}")
    return Tensor(
        out,
        _parents=(a, b),
        _vjp=lambda g: (
            _unbroadcast(g, a.data.shape),
            _unbroadcast(-g, b.data.shape),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    return Tensor(
        out,
        _parents=(a, b),
        _vjp=lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    return Tensor(
        a.data @ b.data,
        _parents=(a, b),
        _vjp=lambda g: (g @ b.data.T, a.data.T @ g),
    )


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_raw(x.data)
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g * out * (1.0 - out),))


def _sigmoid_raw(x: Array) -> Array:
    # exp on the negative half only, so large |x| cannot overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.data), _parents=(x,), _vjp=lambda g: (g / x.data,))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty tensor list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = softmax_raw(x.data, axis=axis)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def softmax_raw(x: Array, axis: int = -1) -> Array:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def log_sum_exp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    out = log_sum_exp_raw(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        soft = softmax_raw(x.data, axis=axis)
        if not keepdims:
            g = np.expand_dims(g, axis=axis)
        return (g * soft,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def log_sum_exp_raw(x: Array, axis: int = -1, keepdims: bool = False) -> Array:
    """Max-shifted log-sum-exp; finite whenever any entry along `axis` is."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf: exp(-inf)=0, log(0)=-inf
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = x.data.mean()
    return Tensor(
        out,
        _parents=(x,),
        _vjp=lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),),
    )


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g.reshape(x.data.shape),))


def index_select(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows (or columns) by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(x.data)
        if axis == 0:
            np.add.at(full, idx, g)
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale the rest."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise TrainingError(f"dropout rate must be in [0, 1), got {p}")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return Tensor(x.data * mask, _parents=(x,), _vjp=lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# fused LSTM scan
# ---------------------------------------------------------------------------


def lstm_sequence(
    x: Tensor,
    w_in: Tensor,
    w_rec: Tensor,
    bias: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Run a single-layer LSTM over `x` [T, D] and return all hidden states
    [T, H], scanning left-to-right (or right-to-left with `reverse`) from a
    zero initial state.

    Gate layout in the 4H dimension is (input, forget, cell, output). The
    whole scan is one graph node with a hand-derived backward-through-time,
    which keeps the per-token cost at a handful of numpy calls.
    """
    T, D = x.data.shape
    four_h = w_in.data.shape[1]
    if w_in.data.shape[0] != D or four_h % 4 != 0:
        raise ShapeError(
            f"lstm_sequence: input width {x.data.shape} does not match "
            f"w_in {w_in.data.shape}"
        )
    H = four_h // 4
    if w_rec.data.shape != (H, four_h) or bias.data.shape != (four_h,):
        raise ShapeError(
            f"lstm_sequence: recurrent shapes {w_rec.data.shape}/{bias.data.shape} "
            f"inconsistent with hidden size {H}"
        )

    order = range(T - 1, -1, -1) if reverse else range(T)
    pre_all = x.data @ w_in.data + bias.data  # [T, 4H]
    gates_i = np.empty((T, H))
    gates_f = np.empty((T, H))
    gates_g = np.empty((T, H))
    gates_o = np.empty((T, H))
    tanh_c = np.empty((T, H))
    h_prev_all = np.empty((T, H))
    c_prev_all = np.empty((T, H))
    hidden = np.zeros((T, H))

    h = np.zeros(H)
    c = np.zeros(H)
    for t in order:
        h_prev_all[t] = h
        c_prev_all[t] = c
        pre = pre_all[t] + h @ w_rec.data
        i = _sigmoid_raw(pre[:H])
        f = _sigmoid_raw(pre[H : 2 * H])
        g = np.tanh(pre[2 * H : 3 * H])
        o = _sigmoid_raw(pre[3 * H :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates_i[t], gates_f[t], gates_g[t], gates_o[t] = i, f, g, o
        tanh_c[t] = tc
        hidden[t] = h

    def vjp(grad_h: Array):
        d_pre = np.empty((T, four_h))
        dh_carry = np.zeros(H)
        dc_carry = np.zeros(H)
        for t in reversed(order):
            i, f, g, o = gates_i[t], gates_f[t], gates_g[t], gates_o[t]
            tc = tanh_c[t]
            dh = grad_h[t] + dh_carry
            do = dh * tc
            dc = dc_carry + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev_all[t]
            dc_carry = dc * f
            d_pre[t, :H] = di * i * (1.0 - i)
            d_pre[t, H : 2 * H] = df * f * (1.0 - f)
            d_pre[t, 2 * H : 3 * H] = dg * (1.0 - g * g)
            d_pre[t, 3 * H :] = do * o * (1.0 - o)
            dh_carry = d_pre[t] @ w_rec.data.T
        dx = d_pre @ w_in.data.T
        dw_in = x.data.T @ d_pre
        dw_rec = h_prev_all.T @ d_pre
        db = d_pre.sum(axis=0)
        return (dx, dw_in, dw_rec, db)

    return Tensor(hidden, _parents=(x, w_in, w_rec, bias), _vjp=vjp)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def _check_finite_grads(params: list[Parameter]):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            name = getattr(p, "name", "<unnamed>")
            raise TrainingError(f"non-finite gradient in parameter {name!r}")


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class SGD:
    """Plain gradient descent; the trainer anneals `learning_rate` in place."""

    kind = "sgd"

    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise TrainingError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: list[Parameter]):
        _check_finite_grads(params)
        self.step_count += 1
        for p in params:
            if p.grad is not None:
                p.data -= self.learning_rate * p.grad
            p.grad = None


class Adam:
    """Bias-corrected Adam with optional linear warm-up of the peak rate
    over the first `warmup_steps` steps."""

    kind = "adam"

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        warmup_steps: int = 0,
    ):
        if learning_rate <= 0:
            raise TrainingError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.step_count = 0
        self._moments: dict[int, tuple[Array, Array]] = {}

    def effective_rate(self, step: int) -> float:
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.learning_rate * step / self.warmup_steps
        return self.learning_rate

    def step(self, params: list[Parameter]):
        _check_finite_grads(params)
        self.step_count += 1
        t = self.step_count
        lr = self.effective_rate(t)
        correct1 = 1.0 - self.beta1**t
        correct2 = 1.0 - self.beta2**t
        for p in params:
            if p.grad is None:
                continue
            key = id(p)
            if key not in self._moments:
                self._moments[key] = (np.zeros_like(p.data), np.zeros_like(p.data))
            m, v = self._moments[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            m_hat = m / correct1
            v_hat = v / correct2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


def optimizer_step(state, params: list[Parameter]):
    """Apply one update with either optimizer; gradients are zeroed after."""
    state.step(params)
