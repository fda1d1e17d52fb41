"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only what the denoiser needs is here: 3x3 same-size convolution, ReLU,
channel concat/split, a few elementwise ops, the band-weighted MSE loss and
an ADAM optimizer. Arrays are either ``(C, H, W)`` or batched
``(N, C, H, W)``; the channel axis is always ``-3``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, NumericError, ShapeError

# test hook used by the gradient checker to prove it can detect a broken backward
_BACKWARD_FAULT: dict[str, float] = {}


@contextlib.contextmanager
def corrupt_backward(op: str = "conv2d", factor: float = 1.01):
    """Scale the weight gradient produced by ``op`` while the context is active."""
    _BACKWARD_FAULT[op] = factor
    try:
        yield
    finally:
        _BACKWARD_FAULT.pop(op, None)


class Tensor:
    """A float64 array plus the graph bookkeeping needed for ``backward``."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = _op
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        other = _as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return _node(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        return _node(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        shape = self.shape
        return _node(np.asarray(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable leaf tensor carrying its own ADAM moments."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _op=op)
    if out.requires_grad:
        out._backward = backward_fn
    else:
        out._parents = ()
    return out


# --- convolution -----------------------------------------------------------


def _correlate3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation of (N, C, H, W) with (O, C, 3, 3)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, H, W, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: int = 1) -> Tensor:
    """3x3 cross-correlation (no kernel flip) with zero padding of one pixel."""
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects (Cout, Cin, 3, 3) weights, got {weight.shape}")
    if pad != 1:
        raise DomainError(f"conv2d supports pad=1 only, got {pad}")
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects (C, H, W) or (N, C, H, W) input, got {x.shape}")
    cout, cin = weight.shape[:2]
    if x.shape[-3] != cin:
        raise ShapeError(f"conv2d input has {x.shape[-3]} channels, weights expect {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {cout} output channels")

    unbatched = x.data.ndim == 3
    xb = x.data[None] if unbatched else x.data
    w = weight.data
    out = _correlate3x3(xb, w) + bias.data[None, :, None, None]

    def _backward(g):
        gb = g[None] if unbatched else g
        gx = _correlate3x3(gb, np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))
        xp = np.pad(xb, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = sliding_window_view(xp, (3, 3), axis=(2, 3))
        gw = np.tensordot(gb, cols, axes=([0, 2, 3], [0, 2, 3]))
        gw = gw * _BACKWARD_FAULT.get("conv2d", 1.0)
        gbias = gb.sum(axis=(0, 2, 3))
        return (gx[0] if unbatched else gx), gw, gbias

    return _node(out[0] if unbatched else out, (x, weight, bias), _backward, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along the channel axis in argument order."""
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != len(ref) or p.shape[:-3] != ref[:-3] or p.shape[-2:] != ref[-2:]:
            raise ShapeError(f"concat_channels: {p.shape} incompatible with {ref}")
    sizes = [p.shape[-3] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([p.data for p in parts], axis=-3),
        tuple(parts),
        lambda g: tuple(np.split(g, bounds, axis=-3)),
        "concat",
    )


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Split along the channel axis into contiguous groups of ``sizes``."""
    if sum(sizes) != x.shape[-3] or any(s < 1 for s in sizes):
        raise ShapeError(f"split sizes {list(sizes)} do not partition {x.shape[-3]} channels")
    outs = []
    start = 0
    for size in sizes:
        sl = (Ellipsis, slice(start, start + size), slice(None), slice(None))
        full_shape = x.shape

        def _backward(g, sl=sl, full_shape=full_shape):
            gx = np.zeros(full_shape)
            gx[sl] = g
            return (gx,)

        outs.append(_node(x.data[sl].copy(), (x,), _backward, "split"))
        start += size
    return outs


def weighted_band_mse(pred: Sequence[Tensor], target: Sequence, mu: Sequence[float], n: int) -> Tensor:
    """Band-weighted squared error: sum_k mu_k * ||pred_k - target_k||^2 / (2 K n)."""
    k = len(pred)
    if k == 0 or n <= 0:
        raise DomainError(f"weighted_band_mse needs K >= 1 and N >= 1, got K={k}, N={n}")
    if len(target) != k or len(mu) != k:
        raise ShapeError(f"weighted_band_mse: {k} predictions, {len(target)} targets, {len(mu)} weights")
    if any(m < 0 for m in mu):
        raise DomainError(f"band weights must be non-negative, got {list(mu)}")
    diffs = []
    for p, t in zip(pred, target):
        t = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise ShapeError(f"prediction {p.shape} vs target {t.shape}")
        diffs.append(p.data - t)
    scale = 1.0 / (2.0 * k * n)
    value = scale * sum(m * float(np.sum(d * d)) for m, d in zip(mu, diffs))

    def _backward(g):
        return tuple(g * 2.0 * scale * m * d for m, d in zip(mu, diffs))

    return _node(np.asarray(value), tuple(pred), _backward, "weighted_band_mse")


# --- backprop & optimisation ----------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    """Write d(loss)/d(leaf) into ``.grad`` of every reachable leaf needing gradients.

    Leaf gradients are overwritten, not accumulated. The graph is released
    afterwards, so a second call on the same loss is rejected.
    """
    if loss.data.ndim != 0:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise DomainError("backward already ran on this graph; recompute the forward pass")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if g.shape == node.shape else np.broadcast_to(g, node.shape).copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
    loss._consumed = True


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected ADAM update, in place. All gradients are checked before any update."""
    params = list(params)
    if lr < 0:
        raise DomainError(f"learning rate must be non-negative, got {lr}")
    for p in params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {p.name or p!r}")
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def kaiming_normal_init(shape: Sequence[int], seed) -> np.ndarray:
    """He-normal weights for a conv kernel of shape (Cout, Cin, kh, kw): std = sqrt(2 / fan_in)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a (Cout, Cin, kh, kw) shape, got {shape}")
    fan_in = shape[1] * shape[2] * shape[3]
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
