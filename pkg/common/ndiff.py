"""
ndiff - small reverse-mode differentiation library on numpy arrays
Features:
- Tensor with recorded graph and backward()
- Param / Module containers with named state dicts
- Layers used by the trajectory model (linear, mlp, gru_cell,
  multi-head attention, layer norm, temporal conv, feed-forward)
- AdamW optimizer and warmup + cosine learning-rate schedule
- Central finite-difference gradcheck
"""

import contextlib
import math
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, ModelStateError, NumericError, UsageError


DEFAULT_DTYPE = np.float64
MASK_FILL = -1e9

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread (inference, target computation)"""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense array plus the recorded operation that produced it"""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple["Tensor", ...] = (),
                 _backward: Optional[Callable] = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    # ==================== BASICS ====================

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ==================== OPERATORS ====================

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # ==================== BACKWARD ====================

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Populate .grad on every leaf reachable from `loss`

    Raises:
        UsageError: non-scalar loss, or the graph was already consumed
        NumericError: loss is NaN/Inf
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss", "backward() on a non-finite loss")
    if loss._consumed:
        raise UsageError("backward() called twice on the same graph; build a new forward pass")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        parent_grads = node._backward(grad)
        for parent, pgrad in zip(node._parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pgrad
            else:
                grads[key] = pgrad
        node._backward = None
        node._parents = ()
    loss._consumed = True


# ==================== ELEMENTWISE OPS ====================

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = _lift(a)
    out = a.data ** exponent
    return _result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def sqrt(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU"""
    a = _lift(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _result(out, (a,), grad_fn)


def absolute(a: Tensor) -> Tensor:
    a = _lift(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    a = _lift(a)
    keep = a.data >= floor
    return _result(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def where(condition: np.ndarray, a, b) -> Tensor:
    """Select with a constant boolean mask"""
    a, b = _lift(a), _lift(b)
    cond = np.asarray(condition, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                              _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ==================== REDUCTIONS / SHAPE OPS ====================

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def take(a: Tensor, index) -> Tensor:
    a = _lift(a)
    basic = _is_basic_index(index)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return _result(out, tuple(tensors),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def pad_axis(a: Tensor, before: int, after: int, axis: int) -> Tensor:
    """Zero-pad one axis"""
    a = _lift(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)

    def grad_fn(g):
        index = [slice(None)] * a.ndim
        index[axis] = slice(before, before + a.shape[axis])
        return (g[tuple(index)],)

    return _result(out, (a,), grad_fn)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if a.ndim > 1 else np.multiply.outer(a.data, g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _result(out, (a, b), grad_fn)


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Numerically stable softmax

    Args:
        a: Scores
        axis: Normalization axis
        mask: Boolean array broadcastable to a; False entries get zero weight
    """
    a = _lift(a)
    scores = a.data
    if mask is not None:
        scores = np.where(mask, scores, MASK_FILL)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), grad_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


# ==================== PARAMETERS / MODULES ====================

class Param(Tensor):
    """Trainable leaf tensor; grad is zeroed between optimizer steps"""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)
        self._consumed = False


class Module:
    """Parameter container; attribute names form the parameter path"""

    layer_name = "module"

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Param]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Param):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{path}.{i}", item

    def parameters(self) -> List[Param]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ModelStateError(f"state dict mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=p.data.dtype)
            if value.shape != p.data.shape:
                raise ModelStateError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
            p.data = value.copy()
            p.zero_grad()


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class Linear(Module):
    layer_name = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Param(_uniform(rng, (in_features, out_features), bound))
        self.bias = Param(_uniform(rng, (out_features,), bound)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(self.layer_name, f"expected last dim {self.in_features}, got shape {x.shape}")
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class MLP(Module):
    """Stack of linear maps with GELU between them"""

    layer_name = "mlp"

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, final_activation: bool = False):
        if len(dims) < 2:
            raise DimensionError(self.layer_name, f"needs at least input and output dims, got {dims}")
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_activation:
                x = gelu(x)
        return x


class LayerNorm(Module):
    layer_name = "layer_norm"

    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gamma = Param(np.ones(dim))
        self.beta = Param(np.zeros(dim))

    def normalize(self, x: Tensor) -> Tensor:
        """Zero-mean unit-variance over the last axis, before the affine map"""
        if x.shape[-1] != self.dim:
            raise DimensionError(self.layer_name, f"expected last dim {self.dim}, got shape {x.shape}")
        centered = x - tmean(x, axis=-1, keepdims=True)
        var = tmean(centered * centered, axis=-1, keepdims=True)
        return centered / sqrt(var + self.eps)

    def __call__(self, x: Tensor) -> Tensor:
        return self.normalize(x) * self.gamma + self.beta


class GRUCell(Module):
    """Gated recurrent unit step; gate order (reset, update, candidate)"""

    layer_name = "gru_cell"

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden_dim)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_x = Param(_uniform(rng, (input_dim, 3 * hidden_dim), bound))
        self.w_h = Param(np.concatenate([_orthogonal(rng, hidden_dim) for _ in range(3)], axis=1))
        self.b_x = Param(_uniform(rng, (3 * hidden_dim,), bound))
        self.b_h = Param(_uniform(rng, (3 * hidden_dim,), bound))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.input_dim or h.shape[-1] != self.hidden_dim:
            raise DimensionError(self.layer_name,
                                 f"expected input {self.input_dim} / hidden {self.hidden_dim}, "
                                 f"got {x.shape} / {h.shape}")
        H = self.hidden_dim
        gx = matmul(x, self.w_x) + self.b_x
        gh = matmul(h, self.w_h) + self.b_h
        r = sigmoid(gx[..., :H] + gh[..., :H])
        z = sigmoid(gx[..., H:2 * H] + gh[..., H:2 * H])
        n = tanh(gx[..., 2 * H:] + r * gh[..., 2 * H:])
        return (1.0 - z) * n + z * h


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention with `heads` heads

    Query tokens (B, Lq, D) attend to key/value tokens (B, Lk, Dkv).
    key_mask (B, Lk) marks valid keys; every query needs at least one.
    """

    layer_name = "multi_head_attention"

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kv_dim: Optional[int] = None):
        if dim % heads:
            raise DimensionError(self.layer_name, f"query dim {dim} not divisible by heads {heads}")
        kv_dim = kv_dim or dim
        self.dim = dim
        self.heads = heads
        self.kv_dim = kv_dim
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(kv_dim, dim, rng)
        self.v_proj = Linear(kv_dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, q_src: Tensor, kv_src: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        if q_src.ndim != 3 or kv_src.ndim != 3 or q_src.shape[0] != kv_src.shape[0]:
            raise DimensionError(self.layer_name,
                                 f"expected (B, L, D) inputs with equal batch, got {q_src.shape} / {kv_src.shape}")
        if q_src.shape[-1] != self.dim or kv_src.shape[-1] != self.kv_dim:
            raise DimensionError(self.layer_name,
                                 f"expected dims {self.dim}/{self.kv_dim}, got {q_src.shape} / {kv_src.shape}")
        B, Lq, _ = q_src.shape
        q = self._split(self.q_proj(q_src))
        k = self._split(self.k_proj(kv_src))
        v = self._split(self.v_proj(kv_src))
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dim // self.heads))
        mask = None
        if key_mask is not None:
            key_mask = np.asarray(key_mask, dtype=bool)
            if key_mask.shape != (B, kv_src.shape[1]):
                raise DimensionError(self.layer_name, f"key_mask shape {key_mask.shape} != {(B, kv_src.shape[1])}")
            mask = key_mask[:, None, None, :]
        weights = softmax(scores, axis=-1, mask=mask)
        ctx = matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, Lq, self.dim)
        return self.out_proj(ctx)


class Conv1dTemporal(Module):
    """Same-padded 1-D convolution over the time axis of (B, L, C) inputs"""

    layer_name = "conv1d_temporal"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        if kernel % 2 == 0:
            raise DimensionError(self.layer_name, f"kernel must be odd, got {kernel}")
        self.in_channels = in_channels
        self.kernel = kernel
        self.proj = Linear(kernel * in_channels, out_channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.in_channels:
            raise DimensionError(self.layer_name, f"expected (B, L, {self.in_channels}), got {x.shape}")
        half = self.kernel // 2
        L = x.shape[1]
        padded = pad_axis(x, half, half, axis=1)
        windows = concat([padded[:, i:i + L, :] for i in range(self.kernel)], axis=-1)
        return self.proj(windows)


class FeedForward(Module):
    layer_name = "feed_forward"

    def __init__(self, dim: int, mult: int, rng: np.random.Generator):
        self.up = Linear(dim, dim * mult, rng)
        self.down = Linear(dim * mult, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


# ==================== OPTIMIZATION ====================

class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay"""

    def __init__(self, params: Sequence[Param], betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        if not lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> Dict:
        return {
            "step": self.step_count,
            "m": {p.name: m.copy() for p, m in zip(self.params, self.m)},
            "v": {p.name: v.copy() for p, v in zip(self.params, self.v)},
        }

    def load_state_dict(self, state: Dict) -> None:
        try:
            self.step_count = int(state["step"])
            self.m = [np.asarray(state["m"][p.name], dtype=p.data.dtype).reshape(p.shape) for p in self.params]
            self.v = [np.asarray(state["v"][p.name], dtype=p.data.dtype).reshape(p.shape) for p in self.params]
        except KeyError as e:
            raise ModelStateError(f"optimizer state missing entry {e}")


@dataclass
class LrSchedule:
    """Linear warmup to base_lr, then cosine annealing to zero at total_steps"""
    total_steps: int
    base_lr: float = 5e-4
    warmup_steps: int = 1500

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.warmup_steps < 1 or self.total_steps <= self.warmup_steps:
            raise ConfigError(
                f"need 1 <= warmup_steps < total_steps, got warmup={self.warmup_steps} total={self.total_steps}"
            )

    def lr_at(self, step: int) -> float:
        step = min(max(step, 0), self.total_steps)
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ==================== GRADCHECK ====================

def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients against central finite differences

    Args:
        fn: Zero-argument closure returning a scalar Tensor built from `inputs`
        inputs: Leaf tensors (requires_grad=True) to perturb
        h: Finite-difference step
        max_entries: Check at most this many randomly chosen entries per input
        rng: Generator used to choose entries

    Returns:
        Maximum relative error |a - n| / max(|a| + |n|, 1e-5) over checked entries
    """
    rng = rng or np.random.default_rng(0)
    for x in inputs:
        x.grad = np.zeros_like(x.data)
    loss = fn()
    backward(loss)
    analytic = [x.grad.copy() for x in inputs]

    worst = 0.0
    with no_grad():
        for x, grad in zip(inputs, analytic):
            flat = x.data.reshape(-1)
            indices = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                indices = rng.choice(flat.size, size=max_entries, replace=False)
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                up = fn().item()
                flat[i] = original - h
                down = fn().item()
                flat[i] = original
                numeric = (up - down) / (2 * h)
                a = grad.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-5)
                worst = max(worst, err)
    return worst
