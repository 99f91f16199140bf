"""Minimal reverse-mode autodiff over numpy arrays, plus Adam.

Tensors wrap numpy arrays of up to three dims (optionally batch-stacked
token matrices); each op records a backward closure and backward() walks
the tape in reverse topological order, accumulating into .grad. Gradients
are additive across backward calls, so repeated backward doubles them.

Training runs float32; gradient-check builds use float64. Inside a
`no_grad()` block ops skip tape construction entirely.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray, owned: bool = False):
        """Add g to .grad; `owned` marks freshly allocated buffers (no copy)."""
        if self.grad is None:
            self.grad = g if owned else g.copy()
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Reverse pass from this node; seeds with ones unless given."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad or p._parents:
                    stack.append((p, False))
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))


class Parameter(Tensor):
    """Named leaf tensor tracked by the optimizer and the checkpointer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.asarray(data), requires_grad=True)
        self.requires_grad = True  # parameters track grads even under no_grad at build time
        self.name = name


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _track(*parents: Tensor) -> bool:
    return _grad_enabled and any(p.requires_grad or p._parents for p in parents)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _track(*parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = _unbroadcast(g, a.data.shape)
            a.accumulate(ga, owned=ga is not g)
        if b.requires_grad or b._parents:
            gb = _unbroadcast(g, b.data.shape)
            b.accumulate(gb, owned=gb is not g)

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape), owned=True)
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape), owned=True)

    return _make(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    out_data = a.data * a.data.dtype.type(c)

    def backward(g):
        a.accumulate(g * a.data.dtype.type(c), owned=True)

    return _make(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul with numpy leading-dim broadcasting."""
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate(_unbroadcast(ga, a.data.shape), owned=True)
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate(_unbroadcast(gb, b.data.shape), owned=True)

    return _make(out_data, (a, b), backward)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _wrap(a)
    old = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        a.accumulate(g.reshape(old), owned=True)

    return _make(out_data, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    a = _wrap(a)
    out_data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        a.accumulate(np.swapaxes(g, ax1, ax2), owned=True)

    return _make(out_data, (a,), backward)


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Slice [start, start+length) along the last axis."""
    a = _wrap(a)
    out_data = a.data[..., start : start + length]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start : start + length] = g
        a.accumulate(full, owned=True)

    return _make(out_data, (a,), backward)


# -- reductions ---------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    a = _wrap(a)
    out_data = np.asarray(a.data.sum())

    def backward(g):
        a.accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype), owned=True)

    return _make(out_data, (a,), backward)


# -- dense layers --------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w^T + b with w shaped (out, in); b broadcasts over rows.

    Leading dims are flattened into one gemm (numpy would otherwise loop
    tiny per-batch gemms).
    """
    x, w = _wrap(x), _wrap(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(f"linear: input dim {x.data.shape[-1]} != weight in-dim {w.data.shape[1]}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out_data = x2 @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"linear: bias shape {b.data.shape} != ({w.data.shape[0]},)")
        out_data += b.data
    out_data = out_data.reshape(*lead, w.data.shape[0])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad or x._parents:
            x.accumulate((g2 @ w.data).reshape(x.data.shape), owned=True)
        if w.requires_grad or w._parents:
            w.accumulate(g2.T @ x2, owned=True)
        if b is not None and (b.requires_grad or b._parents):
            b.accumulate(g2.sum(axis=0), owned=True)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Affine-free layer norm over the last axis (scale/shift live in AdaLN)."""
    x = _wrap(x)
    if x.data.shape[-1] < 2:
        raise ValueError("layer_norm needs feature dimension >= 2")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    std = np.sqrt(var + x.data.dtype.type(eps))
    normed = (x.data - mean) / std

    def backward(g):
        gn = g
        gx = (gn - gn.mean(axis=-1, keepdims=True)
              - normed * (gn * normed).mean(axis=-1, keepdims=True)) / std
        x.accumulate(gx, owned=True)

    return _make(normed, (x,), backward)


# -- pointwise -----------------------------------------------------------------

def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Sign-split logistic: exp only of -|x|, so no overflow anywhere."""
    e = np.exp(-np.abs(x))
    num = np.where(x >= 0, x.dtype.type(1.0), e)
    e += 1.0
    num /= e
    return num


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    out_data = stable_sigmoid(a.data)

    def backward(g):
        a.accumulate(g * out_data * (1.0 - out_data), owned=True)

    return _make(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out_data * out_data), owned=True)

    return _make(out_data, (a,), backward)


def silu(a: Tensor) -> Tensor:
    a = _wrap(a)
    sig = stable_sigmoid(a.data)
    out_data = a.data * sig

    def backward(g):
        a.accumulate(g * sig * (1.0 + a.data * (1.0 - sig)), owned=True)

    return _make(out_data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed as logaddexp(0, x); gradient is sigmoid(x)."""
    a = _wrap(a)
    out_data = np.logaddexp(a.data.dtype.type(0.0), a.data)

    def backward(g):
        a.accumulate(g * stable_sigmoid(a.data), owned=True)

    return _make(out_data, (a,), backward)


def softmax_last(a: Tensor) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a.accumulate(out_data * (g - dot), owned=True)

    return _make(out_data, (a,), backward)


# -- composite blocks ------------------------------------------------------------

@dataclass
class AttentionParams:
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.data.shape
    dh = d // heads
    return swapaxes(reshape(x, (*lead, t, heads, dh)), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.data.shape
    return reshape(swapaxes(x, -3, -2), (*lead, t, h * dh))


def multi_head_attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams, heads: int) -> Tensor:
    """softmax(Q K^T / sqrt(d_h)) V per head, concatenated, output-projected.

    Self-attention is the kv_in = q_in case. No positional encoding, so the
    output is invariant to KV token order.
    """
    d = q_in.data.shape[-1]
    if d % heads != 0:
        raise ValueError(f"d_model {d} not divisible by heads {heads}")
    if kv_in.data.shape[-1] != d:
        raise ValueError("q and kv feature dims differ")
    q = _split_heads(linear(q_in, p.wq, p.bq), heads)
    k = _split_heads(linear(kv_in, p.wk, p.bk), heads)
    v = _split_heads(linear(kv_in, p.wv, p.bv), heads)
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(d // heads))
    out = _merge_heads(matmul(softmax_last(scores), v))
    return linear(out, p.wo, p.bo)


def mlp_2layer(x: Tensor, w1: Parameter, b1: Parameter, w2: Parameter, b2: Parameter) -> Tensor:
    """linear -> SiLU -> linear."""
    return linear(silu(linear(x, w1, b1)), w2, b2)


# -- optimizer ---------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Parameter], lr: float | None = None) -> None:
    """Bias-corrected Adam update in place; zeroes gradients afterwards."""
    from . import kernels

    state.step += 1
    t = state.step
    lr_t = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.data)
        g = np.ascontiguousarray(g, dtype=p.data.dtype)
        kernels.adam_update_numpy(
            p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
            b1, b2, c1, c2, lr_t, state.eps,
        )
        p.grad = None


class FlatAdam:
    """Adam over parameters consolidated in one flat buffer.

    Gathers per-parameter gradients into a single array so the fused
    update kernel runs once per step instead of once per parameter;
    the update math is identical to adam_step.
    """

    def __init__(self, flat_params: np.ndarray, params: list[Parameter],
                 lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        base = flat_params
        for p in params:
            if p.data.base is not base:
                raise ValueError(f"parameter {p.name} is not a view of the flat buffer")
        self.flat = flat_params
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self._m = np.zeros_like(flat_params)
        self._v = np.zeros_like(flat_params)
        self._g = np.empty_like(flat_params)
        self._slices = []
        off = 0
        for p in params:
            self._slices.append((p, off, off + p.data.size))
            off += p.data.size
        assert off == flat_params.size

    def gather_grads(self) -> np.ndarray:
        for p, lo, hi in self._slices:
            if p.grad is None:
                self._g[lo:hi] = 0.0
            else:
                self._g[lo:hi] = p.grad.reshape(-1)
        return self._g

    def step(self, lr: float | None = None, clip_norm: float | None = None) -> float:
        """Gather, optionally clip the global norm, update; returns the norm."""
        from . import kernels

        g = self.gather_grads()
        norm = float(np.sqrt(np.dot(g, g)))
        if clip_norm is not None and norm > clip_norm:
            g *= g.dtype.type(clip_norm / (norm + 1e-12))
        st = self.state
        st.step += 1
        c1 = 1.0 - st.beta1**st.step
        c2 = 1.0 - st.beta2**st.step
        kernels.adam_update(self.flat, g, self._m, self._v,
                            st.beta1, st.beta2, c1, c2,
                            st.lr if lr is None else lr, st.eps)
        for p in self.params:
            p.grad = None
        return norm


def global_grad_norm(params: list[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            flat = np.ascontiguousarray(p.grad).reshape(-1)
            total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scales all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.data.dtype.type(factor)
    return norm


# -- gradient checking ----------------------------------------------------------------

def numeric_gradient(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of scalar f(arrays) w.r.t. each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            fp = f()
            arr.flat[i] = orig - h
            fm = f()
            arr.flat[i] = orig
            g.flat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest deviation relative to the gradient's own scale (inf-norm)."""
    scale = max(np.max(np.abs(analytic), initial=0.0),
                np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)
