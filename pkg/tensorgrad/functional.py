"""
Differentiable ops over Tensor

Binary elementwise ops take two tensors of identical shape, or a tensor and
a Python scalar; there is no general broadcasting. Spatial tensors are laid
out H × W × C.
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from tensorgrad.tensor import ShapeError, Tensor, as_tensor

Scalar = Union[int, float]

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ----------------------------------------------------------------------
# Elementwise arithmetic
# ----------------------------------------------------------------------

def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if isinstance(b, (int, float)):
        return Tensor.from_op(a.data + b, (a,), lambda g: (g,))
    b = as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -b)
    b = as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if isinstance(b, (int, float)):
        return Tensor.from_op(a.data * b, (a,), lambda g: (g * b,))
    b = as_tensor(b)
    _same_shape(a, b, "mul")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def sum_all(a: Tensor) -> Tensor:
    return Tensor.from_op(np.sum(a.data), (a,), lambda g: (np.full_like(a.data, g),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor.from_op(np.sum(a.data) / n, (a,), lambda g: (np.full_like(a.data, g / n),))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors, accumulated left to right"""
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "add_n")
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        data = data + t.data
    return Tensor.from_op(data, tuple(tensors), lambda g: tuple(g for _ in tensors))


# ----------------------------------------------------------------------
# Shape ops
# ----------------------------------------------------------------------

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing"""
    def rule(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)
    return Tensor.from_op(a.data[index], (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along one axis; other extents must agree"""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), rule)


def broadcast_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """Replicate a C vector to H × W × C"""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_spatial expects a vector, got {v.shape}")
    data = np.broadcast_to(v.data, (height, width, v.shape[0]))
    return Tensor.from_op(data, (v,), lambda g: (g.sum(axis=(0, 1)),))


# ----------------------------------------------------------------------
# Linear algebra
# ----------------------------------------------------------------------

def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x [..., I] @ w [I, O] for 1-D or 2-D x"""
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {w.shape}")

    def rule(g):
        gx = g @ w.data.T
        gw = np.outer(x.data, g) if x.ndim == 1 else x.data.T @ g
        return gx, gw

    return Tensor.from_op(x.data @ w.data, (x, w), rule)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x [..., C] + b [C] along the last axis"""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    lead = tuple(range(x.ndim - 1))
    return Tensor.from_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead) if lead else g))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return add_bias(out, b) if b is not None else out


# ----------------------------------------------------------------------
# Nonlinearities
# ----------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    positive = x.data > 0
    negative_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(positive, x.data, negative_part)
    return Tensor.from_op(out, (x,), lambda g: (g * np.where(positive, 1.0, negative_part + alpha),))


def selu(x: Tensor) -> Tensor:
    positive = x.data > 0
    negative_part = SELU_ALPHA * np.expm1(np.minimum(x.data, 0.0))
    out = SELU_SCALE * np.where(positive, x.data, negative_part)
    slope = SELU_SCALE * np.where(positive, 1.0, negative_part + SELU_ALPHA)
    return Tensor.from_op(out, (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor.from_op(t, (x,), lambda g: (g * (1.0 - t * t),))


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: a ⊙ sigmoid(b) for x = (a, b)"""
    channels = x.shape[-1]
    if channels % 2:
        raise ShapeError(f"glu needs an even channel count, got {channels}")
    half = channels // 2
    a, b = x.data[..., :half], x.data[..., half:]
    s = expit(b)

    def rule(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return Tensor.from_op(a * s, (x,), rule)


ACTIVATIONS = {"elu": elu, "relu": relu, "selu": selu, "tanh": tanh, "sigmoid": sigmoid}


def activation(name: str):
    if name not in ACTIVATIONS:
        raise ValueError(f"Unknown nonlinearity '{name}' (choose from {sorted(ACTIVATIONS)})")
    return ACTIVATIONS[name]


# ----------------------------------------------------------------------
# Convolution and pooling
# ----------------------------------------------------------------------

Padding = Union[int, str, Tuple[Tuple[int, int], Tuple[int, int]]]


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int]:
    """
    Ceil-mode padding: output extent ceil(size / stride)

    The extra row/column of an odd total goes after (bottom / right).
    """
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def resolve_padding(padding: Padding, height: int, width: int, kernel: int,
                    stride: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    if padding == "same":
        return same_padding(height, kernel, stride), same_padding(width, kernel, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    if isinstance(padding, int):
        return (padding, padding), (padding, padding)
    (top, bottom), (left, right) = padding
    return (int(top), int(bottom)), (int(left), int(right))


def conv_output_size(size: int, kernel: int, stride: int, pad: Tuple[int, int]) -> int:
    return (size + pad[0] + pad[1] - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: Padding = 0) -> Tensor:
    """
    Cross-correlation of x [H, W, Cin] with w [k, k, Cin, Cout]

    Output extent floor((H + pad_total − k) / stride) + 1. Computed as an
    im2col matrix product; the backward pass scatters column gradients back
    one kernel offset at a time.
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[2] != x.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape}, kernel {w.shape}")
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d: bias {b.shape} for {w.shape[3]} output channels")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    H, W, c_in = x.shape
    k, c_out = w.shape[0], w.shape[3]
    pad_h, pad_w = resolve_padding(padding, H, W, k, stride)
    H_out = conv_output_size(H, k, stride, pad_h)
    W_out = conv_output_size(W, k, stride, pad_w)
    if H_out < 1 or W_out < 1:
        raise ShapeError(f"conv2d: kernel {k} stride {stride} leaves an empty output for input {x.shape}")

    padded = np.pad(x.data, (pad_h, pad_w, (0, 0)))
    # windows: [H', W', Cin, k, k] -> strided rows/cols -> [H_out, W_out, k, k, Cin]
    windows = sliding_window_view(padded, (k, k), axis=(0, 1))
    windows = windows[:(H_out - 1) * stride + 1:stride, :(W_out - 1) * stride + 1:stride]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(H_out * W_out, k * k * c_in)
    kernel = w.data.reshape(k * k * c_in, c_out)
    out = (cols @ kernel).reshape(H_out, W_out, c_out)
    if b is not None:
        out = out + b.data

    def rule(g):
        g2 = g.reshape(H_out * W_out, c_out)
        gw = (cols.T @ g2).reshape(w.shape)
        gcols = (g2 @ kernel.T).reshape(H_out, W_out, k, k, c_in)
        gpad = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                gpad[i:i + (H_out - 1) * stride + 1:stride, j:j + (W_out - 1) * stride + 1:stride] += gcols[:, :, i, j]
        gx = gpad[pad_h[0]:pad_h[0] + H, pad_w[0]:pad_w[0] + W]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, rule)


def pool_sum_global(x: Tensor) -> Tensor:
    """Sum over both spatial axes: [H, W, C] -> [C]"""
    if x.ndim != 3:
        raise ShapeError(f"pool_sum_global expects H × W × C, got {x.shape}")
    shape = x.shape
    return Tensor.from_op(x.data.sum(axis=(0, 1)), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def upsample_nearest(x: Tensor, factor: int, out_shape: Optional[Tuple[int, int]] = None) -> Tensor:
    """
    Nearest-neighbour upsampling by a power-of-two factor, cropped to out_shape

    Cropping keeps the top-left H_out × W_out block.
    """
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"factor must be a power of two >= 1, got {factor}")
    if x.ndim != 3:
        raise ShapeError(f"upsample_nearest expects H × W × C, got {x.shape}")
    H, W, C = x.shape
    full_h, full_w = H * factor, W * factor
    out_h, out_w = out_shape if out_shape is not None else (full_h, full_w)
    if out_h > full_h or out_w > full_w:
        raise ShapeError(f"upsample_nearest: {H}×{W}×{factor} cannot cover {out_h}×{out_w}")

    data = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)[:out_h, :out_w]

    def rule(g):
        full = np.zeros((full_h, full_w, C), dtype=g.dtype)
        full[:out_h, :out_w] = g
        return (full.reshape(H, factor, W, factor, C).sum(axis=(1, 3)),)

    return Tensor.from_op(data, (x,), rule)


# ----------------------------------------------------------------------
# Recurrent cell
# ----------------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    """
    One LSTM step over any number of independent positions

    x [..., I], h and c [..., H]; w_x [I, 4H], w_h [H, 4H], b [4H] with gate
    blocks ordered input, forget, output, candidate. Leading axes are
    flattened, so a spatial H × W × I input runs the same weights at every
    position.
    """
    hidden = h.shape[-1]
    if w_x.shape != (x.shape[-1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
    if c.shape != h.shape or x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}")

    lead = h.shape[:-1]
    flat = x.ndim > 2 or x.ndim == 1
    if flat:
        x = reshape(x, (-1, x.shape[-1]))
        h_in = reshape(h, (-1, hidden))
        c_in = reshape(c, (-1, hidden))
    else:
        h_in, c_in = h, c

    gates = add_bias(add(matmul(x, w_x), matmul(h_in, w_h)), b)
    i = sigmoid(take(gates, (slice(None), slice(0, hidden))))
    f = sigmoid(take(gates, (slice(None), slice(hidden, 2 * hidden))))
    o = sigmoid(take(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
    g = tanh(take(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_next = add(mul(f, c_in), mul(i, g))
    h_next = mul(o, tanh(c_next))

    if flat:
        h_next = reshape(h_next, lead + (hidden,))
        c_next = reshape(c_next, lead + (hidden,))
    return h_next, c_next


# ----------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------

def _target_array(target, like: Tensor) -> np.ndarray:
    data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=like.data.dtype)
    if data.shape != like.shape:
        raise ShapeError(f"loss: prediction {like.shape} vs target {data.shape}")
    return data


def huber(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean over elements of ½e² for |e| <= δ, δ(|e| − δ/2) otherwise"""
    if delta <= 0:
        raise ValueError(f"huber delta must be > 0, got {delta}")
    e = pred.data - _target_array(target, pred)
    quadratic = np.abs(e) <= delta
    values = np.where(quadratic, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    n = e.size
    return Tensor.from_op(values.sum() / n, (pred,),
                          lambda g: (g * np.where(quadratic, e, delta * np.sign(e)) / n,))


def mse(pred: Tensor, target) -> Tensor:
    e = pred.data - _target_array(target, pred)
    n = e.size
    return Tensor.from_op((e * e).sum() / n, (pred,), lambda g: (g * 2.0 * e / n,))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean of log(1 + exp(−z·(2y − 1))), via logaddexp"""
    y = _target_array(targets, logits)
    margin = logits.data * (2.0 * y - 1.0)
    n = margin.size
    loss = np.logaddexp(0.0, -margin).sum() / n
    return Tensor.from_op(loss, (logits,),
                          lambda g: (g * -(2.0 * y - 1.0) * expit(-margin) / n,))


REGRESSION_LOSSES = {"huber": huber, "mse": lambda pred, target, delta=1.0: mse(pred, target)}
