"""Dense float64 tensors with reverse-mode differentiation and Adam.

Operations record onto the innermost active :class:`Tape`; creation order is
the topological order, so `Tape.backward` is a single reverse sweep. Without
an active tape, ops compute forward only (evaluation mode). Gradients
accumulate into the ``grad`` of leaf tensors created with
``requires_grad=True``, which lets independent tapes sum their contributions
before an optimizer step.

Broadcasting is limited to trailing-shape alignment (a bias of shape (F,)
added to (N, F) rows); anything fancier must be spelled out, which keeps
every backward rule short and auditable.
"""
from __future__ import annotations

import numpy as np

# When set, every op asserts its output is finite. Slow; meant for tests.
DEBUG_CHECK_FINITE = False

_TAPE_STACK = []


class Tensor:
    """N-dimensional float64 value, optionally participating in gradients."""

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_rule", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = None
        self.backward_rule = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    # Operator sugar for the common arithmetic; everything routes through
    # the module-level ops so recording stays in one place.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recorded forward ops, replayed in reverse to accumulate gradients."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Backpropagate from a scalar recorded on this tape."""
        if loss.data.shape != ():
            raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        grads = {id(loss): np.ones(())}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in node.backward_rule(g):
                if not parent.requires_grad:
                    continue
                if parent.backward_rule is None:
                    # leaf: accumulate into .grad (shared across tapes)
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else prev + pg


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, out_data, parents, backward_rule):
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op}: non-finite values in output")
    requires = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires and _TAPE_STACK:
        out.parents = parents
        out.backward_rule = backward_rule
        _TAPE_STACK[-1].nodes.append(out)
    return out


def _broadcast_check(op, a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb} "
                     "(only trailing-shape broadcasting is supported)")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _record("add", a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return _record("sub", a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape))]

    return _record("mul", a.data * b.data, (a, b), bwd)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def bwd(g):
        return [(a, g * c)]

    return _record("scale", a.data * c, (a,), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _record("matmul", a.data @ b.data, (a, b), bwd)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2-D tensor, got shape {a.shape}")

    def bwd(g):
        return [(a, g.T)]

    return _record("transpose", a.data.T.copy(), (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def bwd(g):
        return [(a, g.reshape(old))]

    return _record("reshape", a.data.reshape(shape), (a,), bwd)


def concat(parts, axis):
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return list(zip(parts, np.split(g, splits, axis=axis)))

    return _record("concat", np.concatenate([p.data for p in parts], axis=axis),
                   tuple(parts), bwd)


def sum_(a, axis=None):
    a = _as_tensor(a)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return [(a, np.broadcast_to(g, shape).copy())]
        return [(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())]

    return _record("sum", a.data.sum(axis=axis), (a,), bwd)


def max_(a, axis):
    """Max along one axis; gradient routes to the first argmax (deterministic)."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=axis)

    def bwd(g):
        out = np.zeros_like(a.data)
        gi = np.expand_dims(g, axis)
        np.put_along_axis(out, np.expand_dims(idx, axis), gi, axis=axis)
        return [(a, out)]

    return _record("max", np.max(a.data, axis=axis), (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return [(a, g * mask)]

    return _record("relu", a.data * mask, (a,), bwd)


def log(a):
    a = _as_tensor(a)

    def bwd(g):
        return [(a, g / a.data)]

    return _record("log", np.log(a.data), (a,), bwd)


def abs_(a):
    a = _as_tensor(a)
    sign = np.sign(a.data)

    def bwd(g):
        return [(a, g * sign)]

    return _record("abs", np.abs(a.data), (a,), bwd)


def softmax(a):
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return [(a, s * (g - dot))]

    return _record("softmax", s, (a,), bwd)


def cross_entropy(logits, labels):
    """Mean negative log-softmax probability of the true class.

    ``logits`` is (N, C); ``labels`` an int array in [0, C).
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: labels outside [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return [(logits, g * p / n)]

    return _record("cross_entropy", np.float64(loss), (logits,), bwd)


def frobenius_sq(a):
    """Sum of squared entries (squared Frobenius norm)."""
    a = _as_tensor(a)

    def bwd(g):
        return [(a, 2.0 * g * a.data)]

    return _record("frobenius_sq", np.float64((a.data ** 2).sum()), (a,), bwd)


def gather_rows(a, idx):
    """Rows of a 2-D tensor by integer index; backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2:
        raise ValueError(f"gather_rows: expected 2-D tensor, got shape {a.shape}")

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return [(a, out)]

    return _record("gather_rows", a.data[idx], (a,), bwd)


def scatter_rows(a, idx, n_rows):
    """Place the rows of a 2-D tensor at positions ``idx`` of an (n_rows, F)
    zero tensor; the inverse of :func:`gather_rows` for unique indices."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2 or len(idx) != a.shape[0]:
        raise ValueError(f"scatter_rows: rows {a.shape} vs indices {idx.shape}")
    out = np.zeros((n_rows, a.shape[1]))
    out[idx] = a.data

    def bwd(g):
        return [(a, g[idx])]

    return _record("scatter_rows", out, (a,), bwd)


def batched_vecmat(x, w):
    """Per-row vector-matrix product: (B, D) x (B, D, F) -> (B, F)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or x.shape != w.shape[:2]:
        raise ValueError(f"batched_vecmat: incompatible shapes {x.shape} and {w.shape}")

    def bwd(g):
        gx = np.einsum("bf,bdf->bd", g, w.data)
        gw = np.einsum("bd,bf->bdf", x.data, g)
        return [(x, gx), (w, gw)]

    return _record("batched_vecmat", np.einsum("bd,bdf->bf", x.data, w.data),
                   (x, w), bwd)


def inv(a):
    """Inverse of a square matrix; gradient is -Y^T g Y^T for Y = inv(a)."""
    a = _as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"inv: expected square matrix, got shape {a.shape}")
    y = np.linalg.inv(a.data)

    def bwd(g):
        return [(a, -y.T @ g @ y.T)]

    return _record("inv", y, (a,), bwd)


class BatchNormState:
    """Running statistics for one batchnorm layer (not trainable)."""

    def __init__(self, features, momentum=0.9, eps=1e-5):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state, training, update_running=True):
    """Per-feature normalization over the batch (first) axis of (N, F).

    In training mode, batch statistics normalize and (optionally) update the
    running estimates; in eval mode the running statistics are used.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    n, f = x.shape
    eps = state.eps
    if training:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_running:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1 - m) * mean
            state.running_var = m * state.running_var + (1 - m) * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv_std
        out = gamma.data * xhat + beta.data

        def bwd(g):
            gbeta = g.sum(axis=0)
            ggamma = (g * xhat).sum(axis=0)
            gxhat = g * gamma.data
            gx = inv_std / n * (n * gxhat - gxhat.sum(axis=0)
                                - xhat * (gxhat * xhat).sum(axis=0))
            return [(x, gx), (gamma, ggamma), (beta, gbeta)]

        return _record("batchnorm", out, (x, gamma, beta), bwd)

    inv_std = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (x.data - state.running_mean) * inv_std
    out = gamma.data * xhat + beta.data

    def bwd(g):
        return [(x, g * gamma.data * inv_std),
                (gamma, (g * xhat).sum(axis=0)),
                (beta, g.sum(axis=0))]

    return _record("batchnorm", out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# Parameter initialization and Adam

def glorot(rng, fan_in, fan_out, shape=None):
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weight tensor."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class AdamState:
    """Adam optimizer state over a named parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params, state):
    """One Adam update from the accumulated ``grad`` of each parameter.

    Parameters with ``grad is None`` are treated as zero-gradient.
    Raises on NaN/Inf gradients, leaving parameters untouched.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(
                f"adam_step: non-finite gradient in {name!r} "
                f"(step {state.step_count + 1}); update refused")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.epsilon)


def zero_grads(params):
    for p in params.values():
        p.zero_grad()
