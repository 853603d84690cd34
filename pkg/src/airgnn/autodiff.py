"""A small reverse-mode autodiff engine over dense 2-D numpy arrays.

Operations on tensors that require gradients are recorded, in order, on the
thread's active :class:`Tape`. :func:`backward` walks that record in reverse
and accumulates gradients into the leaf tensors.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_local = threading.local()


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager to scope recording; outside any ``with Tape()``
    block a per-thread default tape is used.
    """

    def __init__(self):
        self.records = []
        self._prev = None

    def record(self, out, inputs, backward_fn):
        out._tape = self
        out._index = len(self.records)
        self.records.append((out, inputs, backward_fn))

    def clear(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        self._prev = None
        return False


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def _recording() -> bool:
    return not getattr(_local, "no_grad", False)


@contextlib.contextmanager
def no_grad():
    """Disable recording, e.g. for evaluation passes."""
    prev = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = prev


class Tensor:
    """Dense 2-D array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensor must be at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._tape = None
        self._index = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        t._index = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr, dtype=dtype)


def _pair(a, b):
    """Coerce operands to tensors; python scalars take the other operand's dtype."""
    if np.isscalar(a) and isinstance(b, Tensor):
        a = Tensor._wrap(np.full((1, 1), a, dtype=b.dtype))
    if np.isscalar(b) and isinstance(a, Tensor):
        b = Tensor._wrap(np.full((1, 1), b, dtype=a.dtype))
    return as_tensor(a), as_tensor(b)


def _make(value, inputs, backward_fn):
    out = Tensor._wrap(value)
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


# Backward rules live in a table so a test can swap one out for a broken
# version (negative control for the gradient checker).
BACKWARD_RULES = {}


def _rule(name):
    def deco(fn):
        BACKWARD_RULES[name] = fn
        return fn

    return deco


@_rule("sigmoid")
def _sigmoid_backward(g, out):
    return g * out * (1.0 - out)


@_rule("gated_mix")
def _gated_mix_backward(g, saved):
    from ._kernels import gated_mix_backward

    return gated_mix_backward(g, *saved)


@_rule("relu")
def _relu_backward(g, x):
    return g * (x > 0)


@contextlib.contextmanager
def corrupted_backward(name: str, factor: float = 1.5):
    """Temporarily scale one registered backward rule by ``factor``."""
    original = BACKWARD_RULES[name]

    def scaled(g, saved):
        out = original(g, saved)
        if isinstance(out, tuple):
            return tuple(None if o is None else factor * o for o in out)
        return factor * out

    BACKWARD_RULES[name] = scaled
    try:
        yield
    finally:
        BACKWARD_RULES[name] = original


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def hadamard(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("hadamard", a, b)
    av, bv = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return _make(av * bv, (a, b), backward)


def scale(t: Tensor, c: float) -> Tensor:
    return _make(t.data * c, (t,), lambda g: (g * c,))


def _dot(x, y):
    # gemm with inner dimension 1 is far slower than the equivalent broadcast
    if x.shape[1] == 1:
        return x * y
    return x @ y


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.data, b.data

    def backward(g):
        ga = _dot(g, bv.T) if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return _make(_dot(av, bv), (a, b), backward)


def _csr_times(mat, x):
    if mat.dtype == x.dtype and x.dtype in (np.float32, np.float64) and mat.format == "csr":
        from ._kernels import csr_dense_matmul

        return csr_dense_matmul(mat.indptr, mat.indices, mat.data, np.ascontiguousarray(x))
    return np.asarray(mat @ x).astype(x.dtype, copy=False)


def spmm(s, h: Tensor) -> Tensor:
    """Sparse-dense product ``s @ h``; ``s`` is a NormalizedAdjacency or scipy matrix."""
    if sp.issparse(s):
        mat, mat_t = s.tocsr(), None
    else:
        mat, mat_t = s.operators(h.data.dtype)
    if mat.shape[1] != h.shape[0]:
        raise ValueError(f"spmm: operator shape {mat.shape} and tensor shape {h.shape} do not conform")
    out = _csr_times(mat, h.data)

    def backward(g):
        t = mat_t if mat_t is not None else mat.T.tocsr()
        return (_csr_times(t, g),)

    return _make(out, (h,), backward)


def relu(t: Tensor) -> Tensor:
    x = t.data
    return _make(np.maximum(x, 0), (t,), lambda g: (BACKWARD_RULES["relu"](g, x),))


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    # split by sign so neither branch overflows in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (t,), lambda g: (BACKWARD_RULES["sigmoid"](g, out),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols: row counts differ, shapes {a.shape} and {b.shape}")
    k = a.shape[1]
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:]))


def row_dot(h: Tensor, u: Tensor) -> Tensor:
    """Per-row dot product of ``h`` with vector ``u``; returns an N x 1 column."""
    if u.shape[0] == 1 and u.shape[1] != 1:
        raise ValueError("row_dot expects u as a column vector of shape (k, 1)")
    if h.shape[1] != u.shape[0]:
        raise ValueError(f"row_dot: shapes {h.shape} and {u.shape} do not conform")
    return matmul(h, u)


def pair_row_dot(a: Tensor, b: Tensor, u: Tensor) -> Tensor:
    """``concat_cols(a, b) @ u`` without materializing the concatenation."""
    if a.shape[0] != b.shape[0] or u.shape != (a.shape[1] + b.shape[1], 1):
        raise ValueError(f"pair_row_dot: shapes {a.shape}, {b.shape} and {u.shape} do not conform")
    k = a.shape[1]
    av, bv, uv = a.data, b.data, u.data
    ua, ub = uv[:k], uv[k:]

    def backward(g):
        ga = g * ua.T if a.requires_grad else None
        gb = g * ub.T if b.requires_grad else None
        gu = np.concatenate([av.T @ g, bv.T @ g]) if u.requires_grad else None
        return ga, gb, gu

    return _make(av @ ua + bv @ ub, (a, b, u), backward)


def gated_mix(a: Tensor, b: Tensor, u: Tensor) -> Tensor:
    """Fused ``mix_rows(a, b, sigmoid(pair_row_dot(a, b, u)))``."""
    from ._kernels import gated_mix_forward

    k = a.shape[1]
    if a.shape != b.shape or u.shape != (2 * k, 1):
        raise ValueError(f"gated_mix: shapes {a.shape}, {b.shape} and {u.shape} do not conform")
    av = np.ascontiguousarray(a.data)
    bv = np.ascontiguousarray(b.data, dtype=av.dtype)
    uv = u.data.astype(av.dtype).ravel()
    ua, ub = uv[:k].copy(), uv[k:].copy()
    out, alpha = gated_mix_forward(av, bv, ua, ub)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=av.dtype)
        saved = (av, bv, ua, ub, alpha, a.requires_grad, b.requires_grad)
        ga, gb, gua, gub = BACKWARD_RULES["gated_mix"](g, saved)
        gu = np.concatenate([gua, gub]).astype(u.dtype)[:, None] if u.requires_grad else None
        return (ga if a.requires_grad else None), (gb if b.requires_grad else None), gu

    return _make(out, (a, b, u), backward)


def mix_rows(a: Tensor, b: Tensor, alpha: Tensor) -> Tensor:
    """``(1 - alpha) * a + alpha * b`` for an N x 1 column ``alpha``, as one recorded op."""
    if a.shape != b.shape:
        raise ValueError(f"mix_rows: shapes {a.shape} and {b.shape} differ")
    if alpha.shape != (a.shape[0], 1):
        raise ValueError(f"mix_rows: alpha must have shape ({a.shape[0]}, 1), got {alpha.shape}")
    av, bv, al = a.data, b.data, alpha.data
    keep = 1.0 - al
    out = av * keep
    out += bv * al

    def backward(g):
        ga = g * keep if a.requires_grad else None
        gb = g * al if b.requires_grad else None
        gal = np.einsum("ij,ij->i", g, bv - av)[:, None] if alpha.requires_grad else None
        return ga, gb, gal

    return _make(out, (a, b, alpha), backward)


def total(t: Tensor) -> Tensor:
    """Sum of all entries as a 1 x 1 tensor."""
    shape = t.shape
    return _make(t.data.sum().reshape(1, 1), (t,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(t: Tensor) -> Tensor:
    n = t.data.size
    shape = t.shape
    return _make(t.data.mean().reshape(1, 1), (t,), lambda g: (np.full(shape, g.item() / n, dtype=t.dtype),))


def dropout(t: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    if not training or rate <= 0.0:
        return t
    # 16-bit uniform draws: several times cheaper than float draws, rate resolution 2**-16
    threshold = int(round(rate * 65536))
    bits = np.frombuffer(rng.bytes(2 * t.data.size), dtype=np.uint16).reshape(t.shape)
    mask = (bits >= threshold) * t.dtype.type(65536 / (65536 - threshold))
    return _make(t.data * mask, (t,), lambda g: (g * mask,))


def masked_softmax_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the rows selected by ``mask``."""
    labels = np.asarray(labels)
    idx = np.flatnonzero(np.asarray(mask))
    if idx.size == 0:
        raise ValueError("masked_softmax_cross_entropy: empty mask")
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(f"logits have {logits.shape[0]} rows but labels have {labels.shape[0]} entries")
    z = logits.data[idx]
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    y = labels[idx]
    picked = z[np.arange(idx.size), y]
    loss = np.mean(logsumexp - picked)

    def backward(g):
        probs = np.exp(z - logsumexp[:, None])
        probs[np.arange(idx.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        full[idx] = probs * (g.item() / idx.size)
        return (full,)

    return _make(np.array([[loss]], dtype=logits.dtype), (logits,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    if loss._index >= len(tape.records) or tape.records[loss._index][0] is not loss:
        raise RuntimeError("loss is not on its tape any more (tape already consumed?)")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, fn in reversed(tape.records[: loss._index + 1]):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._tape is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.clear()


# --- optimizer -------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, decay_mask=None) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` (numpy arrays).

    ``decay_mask`` selects which parameters receive L2 weight decay (all by
    default when ``state.weight_decay`` is nonzero).
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if state.weight_decay and (decay_mask is None or decay_mask[i]):
            g = g + state.weight_decay * p
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, params, lr=0.01, weight_decay=0.0, decay_mask=None, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.decay_mask = decay_mask
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.decay_mask)


# --- gradient checking -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(forward, params, tolerance=1e-4, n_samples=100, h=1e-5, seed=0) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    ``forward`` is a zero-argument callable returning a scalar Tensor built
    from ``params``. At least ``n_samples`` scalar entries are checked (all
    of them when fewer exist). Relative error uses the denominator
    ``max(1e-8, |analytic| + |numeric|)``.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient_check needs float64 parameters")
        p.grad = None
    with Tape():
        loss = forward()
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("non-finite loss in gradient_check")
        backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for a in analytic:
        if not np.isfinite(a).all():
            raise FloatingPointError("non-finite analytic gradient")

    slots = [(pi, j) for pi, p in enumerate(params) for j in range(p.data.size)]
    rng = np.random.default_rng(seed)
    if len(slots) > n_samples:
        chosen = rng.choice(len(slots), size=n_samples, replace=False)
        slots = [slots[c] for c in sorted(chosen)]

    worst_err, worst = 0.0, None
    with no_grad():
        for pi, j in slots:
            flat = params[pi].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            fp = forward().item()
            flat[j] = orig - h
            fm = forward().item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite loss during finite differencing")
            num = (fp - fm) / (2 * h)
            ana = analytic[pi].reshape(-1)[j]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            if err > worst_err or worst is None:
                worst_err, worst = err, (pi, j, float(ana), float(num))
    return GradCheckReport(max_rel_error=float(worst_err), tolerance=tolerance, checked=len(slots), worst=worst)
