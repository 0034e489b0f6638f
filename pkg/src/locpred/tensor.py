"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what the video prediction models need: 2D convolution
(same/valid padding, optional stride), transposed convolution, per-location
and per-channel bias broadcasts, elementwise nonlinearities, Hadamard
products, channel concat/slice, and a pixel-summed binary cross-entropy
loss.  Everything is 64-bit; the models are small, so precision (and
checkability against finite differences) wins over speed.

Each op records its operands and a backward rule on the output tensor; the
computation graph is the resulting DAG of parent references.  ``backward()``
on a scalar loss walks that DAG in reverse topological order and accumulates
gradients into every tensor that either requires grad or leads to one.

Broadcasting is deliberately restricted to the two patterns the models use:
a per-channel bias ``[C]`` into ``[N,C,H,W]`` and a per-location map
``[H,W]`` into ``[N,C,H,W]``.  All other binary ops require identical
shapes.  Graphs are not thread-safe; confine a graph and its tensors to one
thread.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7
BCE_REDUCTION = "sum_per_sequence_mean_over_batch"


class Tensor:
    """A dense float64 array, optionally participating in gradient tracking.

    Leaves created with ``requires_grad=True`` (parameters) receive a
    ``.grad`` array of the same shape after ``backward()`` runs on a loss
    they contributed to.  Gradients accumulate across backward calls until
    reset (``grad = None``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._backward_ran = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; full rules live in the module-level functions
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def backward(self) -> None:
        """Backpropagate from this scalar loss through the recorded graph.

        Raises if the loss is not a scalar, is detached from any graph, or
        if backward already ran for this loss (each graph is single-use).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        if not self._parents:
            raise RuntimeError("loss is detached from any computation graph")
        if self._backward_ran:
            raise RuntimeError("backward() was already called on this loss; rebuild the graph first")
        self._backward_ran = True
        self.grad = np.ones_like(self.data)
        for node in reversed(_topo_order(self)):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS: parents always precede their consumers."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child = stack.pop()
        if child == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if child < len(node._parents):
            stack.append((node, child + 1))
            parent = node._parents[child]
            if id(parent) not in visited:
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if not node._tracked():
        return
    # never accumulate in place: upstream grads may be shared or be views
    node.grad = grad if node.grad is None else node.grad + grad


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p._tracked() for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard (elementwise) product."""
    _require_same_shape(a, b, "mul")

    def backward_fn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward_fn(g):
        _accumulate(a, g * factor)

    return _result(a.data * factor, (a,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a 0-d tensor."""

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _result(np.asarray(a.data.sum()), (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        _accumulate(a, g * y * (1.0 - y))

    return _result(y, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward_fn(g):
        _accumulate(a, g * (1.0 - y * y))

    return _result(y, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    if _relu_margins is not None and a.data.size:
        _relu_margins.append(float(np.min(np.abs(a.data))))

    def backward_fn(g):
        _accumulate(a, g * (a.data > 0))

    return _result(np.maximum(a.data, 0.0), (a,), backward_fn)


_relu_margins: list[float] | None = None


class observe_relu_margins:
    """Context manager collecting min |pre-activation| of every relu call.

    Finite-difference gradient checks are only valid at points where no
    relu argument sits within the probe step of its kink; this makes that
    margin observable so a checker can pick a safe evaluation point.
    """

    def __enter__(self) -> list[float]:
        global _relu_margins
        self._previous = _relu_margins
        _relu_margins = []
        return _relu_margins

    def __exit__(self, *exc) -> None:
        global _relu_margins
        _relu_margins = self._previous


ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")


def activate(a: Tensor, kind: str) -> Tensor:
    """Apply a named activation ('identity' passes through unchanged)."""
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    if kind == "relu":
        return relu(a)
    if kind == "identity":
        return a
    raise ValueError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# broadcasting bias ops


def add_location_map(x: Tensor, loc_map: Tensor) -> Tensor:
    """Add a per-location [H,W] map to every batch item and channel of x.

    The map's gradient is the upstream gradient summed over batch and
    channel dimensions (the map is shared across all of them).
    """
    if x.data.ndim != 4:
        raise ValueError(f"add_location_map: input must be [N,C,H,W], got {x.data.shape}")
    if loc_map.data.shape != x.data.shape[2:]:
        raise ValueError(
            f"add_location_map: map shape {loc_map.data.shape} does not match "
            f"input spatial shape {x.data.shape[2:]}"
        )

    def backward_fn(g):
        _accumulate(x, g)
        _accumulate(loc_map, g.sum(axis=(0, 1)))

    return _result(x.data + loc_map.data, (x, loc_map), backward_fn)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel [C] bias to every location of a [N,C,H,W] tensor."""
    if x.data.ndim != 4:
        raise ValueError(f"add_channel_bias: input must be [N,C,H,W], got {x.data.shape}")
    if bias.data.shape != (x.data.shape[1],):
        raise ValueError(
            f"add_channel_bias: bias shape {bias.data.shape} does not match "
            f"channel count {x.data.shape[1]}"
        )

    def backward_fn(g):
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _result(x.data + bias.data.reshape(1, -1, 1, 1), (x, bias), backward_fn)


# ---------------------------------------------------------------------------
# channel concat / slice


def concat_channels(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels: need at least one tensor")
    for p in parts:
        if p.data.ndim != 4:
            raise ValueError(f"concat_channels: inputs must be [N,C,H,W], got {p.data.shape}")
        if p.data.shape[0] != parts[0].data.shape[0] or p.data.shape[2:] != parts[0].data.shape[2:]:
            raise ValueError(
                f"concat_channels: incompatible shapes {p.data.shape} vs {parts[0].data.shape}"
            )
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, start:stop])

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, backward_fn)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"slice_channels: input must be [N,C,H,W], got {x.data.shape}")
    if not (0 <= start < stop <= x.data.shape[1]):
        raise ValueError(f"slice_channels: bad range [{start}, {stop}) for {x.data.shape[1]} channels")

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _result(x.data[:, start:stop], (x,), backward_fn)


# ---------------------------------------------------------------------------
# convolution

# Forward, input-gradient and weight-gradient kernels share the im2col /
# col2im pair below.  Transposed convolution reuses the input-gradient
# kernel as its forward pass (it is the adjoint of the strided convolution).


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp_shape[:2]
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return xp


def _conv_forward_raw(x, w, stride, ph, pw):
    n = x.shape[0]
    cout, _, kh, kw = w.shape
    oh = (x.shape[2] + 2 * ph - kh) // stride + 1
    ow = (x.shape[3] + 2 * pw - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    return np.matmul(w.reshape(cout, -1), cols).reshape(n, cout, oh, ow)


def _conv_input_grad_raw(g, w, stride, ph, pw, in_h, in_w):
    n, cout, oh, ow = g.shape
    _, cin, kh, kw = w.shape
    cols = np.matmul(w.reshape(cout, -1).T, g.reshape(n, cout, oh * ow))
    xp = _col2im(cols, (n, cin, in_h + 2 * ph, in_w + 2 * pw), kh, kw, stride, oh, ow)
    if ph or pw:
        xp = xp[:, :, ph : ph + in_h, pw : pw + in_w]
    return xp


def _conv_weight_grad_raw(x, g, stride, ph, pw, kh, kw):
    n, cin = x.shape[:2]
    _, cout, oh, ow = g.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    gw = np.einsum("ncp,nkp->ck", g.reshape(n, cout, oh * ow), cols)
    return gw.reshape(cout, cin, kh, kw)


def _conv_padding(kh: int, kw: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"same padding requires odd kernel extents, got {kh}x{kw}")
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}, expected 'same' or 'valid'")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: str = "same", stride: int = 1) -> Tensor:
    """2D convolution (correlation) of [N,Cin,H,W] with [Cout,Cin,kH,kW].

    Same padding zero-pads so that output spatial size is ceil(H/stride);
    valid padding shrinks by kernel-1 before striding.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d: expected 4-d input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    n, cin, h, w_ = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d: input shape {x.data.shape} has {cin} channels but "
            f"weight shape {weight.data.shape} expects {cin_w}"
        )
    if padding == "valid" and (h < kh or w_ < kw):
        raise ValueError(f"conv2d: valid padding needs input {h}x{w_} >= kernel {kh}x{kw}")
    ph, pw = _conv_padding(kh, kw, padding)

    y = _conv_forward_raw(x.data, weight.data, stride, ph, pw)
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {bias.data.shape} does not match Cout={cout}")
        y = y + bias.data.reshape(1, cout, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        if x._tracked():
            _accumulate(x, _conv_input_grad_raw(g, weight.data, stride, ph, pw, h, w_))
        if weight._tracked():
            _accumulate(weight, _conv_weight_grad_raw(x.data, g, stride, ph, pw, kh, kw))
        if bias is not None and bias._tracked():
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _result(y, parents, backward_fn)


def conv2d_transpose(x: Tensor, weight: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Transposed (adjoint) convolution of [N,Cin,H,W] with [Cin,Cout,kH,kW].

    With same padding the output spatial size is H*stride (the adjoint of a
    same-padded strided convolution); this requires kernel >= stride with
    kernel-stride even.  With valid padding the output grows to
    (H-1)*stride + kernel (the adjoint of a valid convolution).
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d_transpose: expected 4-d input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    if stride < 1:
        raise ValueError(f"conv2d_transpose: stride must be >= 1, got {stride}")
    n, cin, h, w_ = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d_transpose: input shape {x.data.shape} has {cin} channels but "
            f"weight shape {weight.data.shape} expects {cin_w}"
        )
    if padding == "same":
        for k in (kh, kw):
            if k < stride or (k - stride) % 2:
                raise ValueError(
                    f"conv2d_transpose: same padding needs kernel >= stride with even "
                    f"difference, got kernel {kh}x{kw} stride {stride}"
                )
        ph, pw = (kh - stride) // 2, (kw - stride) // 2
        oh, ow = h * stride, w_ * stride
    elif padding == "valid":
        ph = pw = 0
        oh, ow = (h - 1) * stride + kh, (w_ - 1) * stride + kw
    else:
        raise ValueError(f"unknown padding {padding!r}, expected 'same' or 'valid'")

    y = _conv_input_grad_raw(x.data, weight.data, stride, ph, pw, oh, ow)

    def backward_fn(g):
        if x._tracked():
            _accumulate(x, _conv_forward_raw(g, weight.data, stride, ph, pw))
        if weight._tracked():
            _accumulate(weight, _conv_weight_grad_raw(g, x.data, stride, ph, pw, kh, kw))

    return _result(y, (x, weight), backward_fn)


# ---------------------------------------------------------------------------
# loss


def bce_loss(pred: Tensor, target: Tensor, reduction: str = BCE_REDUCTION) -> Tensor:
    """Binary cross-entropy, summed per sequence and averaged over the batch.

    ``pred`` is clamped to [BCE_EPS, 1-BCE_EPS] before the logs; the first
    axis is the batch axis, every other axis is summed.  Clamped elements
    get zero gradient.
    """
    if reduction != BCE_REDUCTION:
        raise ValueError(f"unsupported reduction {reduction!r}")
    _require_same_shape(pred, target, "bce_loss")
    if pred.data.ndim < 1:
        raise ValueError("bce_loss: prediction must have a batch axis")
    n = pred.data.shape[0]
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    per_elem = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    value = per_elem.reshape(n, -1).sum(axis=1).mean()

    def backward_fn(g):
        gs = float(g) / n
        if pred._tracked():
            inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
            _accumulate(pred, np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) * gs)
        if target._tracked():
            _accumulate(target, (np.log1p(-p) - np.log(p)) * gs)

    return _result(np.asarray(value), (pred, target), backward_fn)
