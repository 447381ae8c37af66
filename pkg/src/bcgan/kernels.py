"""
Op kernels
Shape rules, forward and backward passes for every op kind the networks use
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.bcgan.errors import ShapeError

Shape = Tuple[int, ...]
Grads = List[Optional[np.ndarray]]

LEAKY_SLOPE = 0.2
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1


@dataclass(frozen=True)
class OpKernel:
    """Shape rule plus forward/backward implementation of one op kind"""

    shape: Callable[[Sequence[Shape], Dict[str, Any]], Shape]
    forward: Callable[[Sequence[np.ndarray], Dict[str, Any]], Tuple[np.ndarray, Any]]
    backward: Callable[[np.ndarray, Sequence[np.ndarray], np.ndarray, Any, Dict[str, Any]], Grads]


class RunningStats:
    """Batchnorm running mean/variance for one layer"""

    def __init__(self, channels: int, momentum: float = BATCHNORM_MOMENTUM, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, count: int) -> None:
        unbiased = batch_var * (count / (count - 1)) if count > 1 else batch_var
        m = self.momentum
        self.mean = ((1.0 - m) * self.mean + m * batch_mean).astype(self.mean.dtype)
        self.var = ((1.0 - m) * self.var + m * unbiased).astype(self.var.dtype)


# ---------------------------------------------------------------- shape rules

def _require_rank(shape: Shape, rank: int, kind: str, what: str = "input") -> None:
    if len(shape) != rank:
        raise ShapeError(f"{kind}: {what} must be rank {rank}, got shape {shape}")


def _conv_attrs(attrs: Dict[str, Any], kind: str) -> Tuple[int, int]:
    stride = attrs.get("stride", 1)
    padding = attrs.get("padding", 0)
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"{kind}: stride must be a positive integer, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ShapeError(f"{kind}: padding must be a non-negative integer, got {padding!r}")
    return stride, padding


def _same_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) != 1:
        raise ShapeError(f"unary op expects 1 input, got {len(shapes)}")
    return tuple(shapes[0])


def _broadcast_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) != 2:
        raise ShapeError(f"binary op expects 2 inputs, got {len(shapes)}")
    try:
        return tuple(np.broadcast_shapes(tuple(shapes[0]), tuple(shapes[1])))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {shapes[0]} with {shapes[1]}") from exc


def _reduce_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) != 1:
        raise ShapeError(f"reduction expects 1 input, got {len(shapes)}")
    return (1,)


def _conv2d_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) not in (2, 3):
        raise ShapeError(f"conv2d expects input, weight[, bias], got {len(shapes)} operands")
    stride, padding = _conv_attrs(attrs, "conv2d")
    x, w = shapes[0], shapes[1]
    _require_rank(x, 4, "conv2d")
    _require_rank(w, 4, "conv2d", "weight")
    n, c, h, wd = x
    out_c, in_c, kh, kw = w
    if in_c != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {in_c}")
    if len(shapes) == 3 and tuple(shapes[2]) != (out_c,):
        raise ShapeError(f"conv2d: bias shape {shapes[2]} != ({out_c},)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or wd + 2 * padding < kw or ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{wd} with padding {padding}")
    return (n, out_c, ho, wo)


def _conv_transpose2d_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) not in (2, 3):
        raise ShapeError(f"conv_transpose2d expects input, weight[, bias], got {len(shapes)} operands")
    stride, padding = _conv_attrs(attrs, "conv_transpose2d")
    x, w = shapes[0], shapes[1]
    _require_rank(x, 4, "conv_transpose2d")
    _require_rank(w, 4, "conv_transpose2d", "weight")
    n, c, h, wd = x
    in_c, out_c, kh, kw = w
    if in_c != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, weight expects {in_c}")
    if len(shapes) == 3 and tuple(shapes[2]) != (out_c,):
        raise ShapeError(f"conv_transpose2d: bias shape {shapes[2]} != ({out_c},)")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: empty output {ho}x{wo}")
    return (n, out_c, ho, wo)


def _batchnorm_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) != 3:
        raise ShapeError(f"batchnorm2d expects input, gamma, beta, got {len(shapes)} operands")
    x = shapes[0]
    _require_rank(x, 4, "batchnorm2d")
    channels = x[1]
    for what, shape in (("gamma", shapes[1]), ("beta", shapes[2])):
        if tuple(shape) != (channels,):
            raise ShapeError(f"batchnorm2d: {what} shape {shape} != ({channels},)")
    return tuple(x)


def _concat_shape(shapes: Sequence[Shape], attrs: Dict[str, Any]) -> Shape:
    if len(shapes) < 2:
        raise ShapeError("concat_channels expects at least 2 inputs")
    for shape in shapes:
        _require_rank(shape, 4, "concat_channels")
    n, _, h, w = shapes[0]
    for shape in shapes[1:]:
        if (shape[0], shape[2], shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {shape} does not match batch/spatial extent of {shapes[0]}")
    return (n, int(sum(shape[1] for shape in shapes)), h, w)


# ---------------------------------------------------------------- helpers

def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # N, C, Ho, Wo, kh, kw view of the padded input
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


# ---------------------------------------------------------------- convolutions

def _conv2d_forward(xs, attrs):
    x, w = xs[0], xs[1]
    stride, padding = attrs.get("stride", 1), attrs.get("padding", 0)
    kh, kw = w.shape[2], w.shape[3]
    windows = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if len(xs) == 3:
        out = out + xs[2][None, :, None, None]
    return np.ascontiguousarray(out), windows


def _conv2d_backward(g, xs, out, windows, attrs):
    x, w = xs[0], xs[1]
    stride, padding = attrs.get("stride", 1), attrs.get("padding", 0)
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
    padded_shape = (x.shape[0], x.shape[1], x.shape[2] + 2 * padding, x.shape[3] + 2 * padding)
    grad_padded = np.zeros(padded_shape, dtype=np.result_type(g, w))
    for i in range(kh):
        for j in range(kw):
            contribution = np.tensordot(g, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            grad_padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contribution
    grad_x = grad_padded[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]]
    grads: Grads = [np.ascontiguousarray(grad_x), grad_w.astype(w.dtype, copy=False)]
    if len(xs) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


def _conv_transpose2d_forward(xs, attrs):
    x, w = xs[0], xs[1]
    stride, padding = attrs.get("stride", 1), attrs.get("padding", 0)
    n, _, h, wd = x.shape
    out_c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    full = np.zeros((n, out_c, (h - 1) * stride + kh, (wd - 1) * stride + kw), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            contribution = np.tensordot(x, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += contribution
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if len(xs) == 3:
        out = out + xs[2][None, :, None, None]
    return np.ascontiguousarray(out), None


def _conv_transpose2d_backward(g, xs, out, saved, attrs):
    x, w = xs[0], xs[1]
    stride, padding = attrs.get("stride", 1), attrs.get("padding", 0)
    n, _, h, wd = x.shape
    out_c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    full = np.zeros((n, out_c, (h - 1) * stride + kh, (wd - 1) * stride + kw), dtype=g.dtype)
    full[:, :, padding:padding + g.shape[2], padding:padding + g.shape[3]] = g
    grad_x = np.zeros(x.shape, dtype=np.result_type(g, w))
    grad_w = np.zeros(w.shape, dtype=w.dtype)
    for i in range(kh):
        for j in range(kw):
            window = full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride]
            grad_x += np.tensordot(window, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
            grad_w[:, :, i, j] = np.tensordot(x, window, axes=([0, 2, 3], [0, 2, 3]))
    grads: Grads = [grad_x, grad_w]
    if len(xs) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


# ---------------------------------------------------------------- batchnorm

def _batchnorm_forward(xs, attrs):
    x, gamma, beta = xs
    eps = attrs.get("eps", BATCHNORM_EPS)
    axes = (0, 2, 3)
    if attrs.get("training", True):
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        stats: Optional[RunningStats] = attrs.get("stats")
        if stats is not None:
            stats.update(mean, var, x.shape[0] * x.shape[2] * x.shape[3])
    else:
        stats = attrs["stats"]
        mean, var = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (x_hat, inv_std)


def _batchnorm_backward(g, xs, out, saved, attrs):
    x, gamma, _ = xs
    x_hat, inv_std = saved
    axes = (0, 2, 3)
    grad_gamma = (g * x_hat).sum(axis=axes)
    grad_beta = g.sum(axis=axes)
    g_hat = g * gamma[None, :, None, None]
    if attrs.get("training", True):
        count = x.shape[0] * x.shape[2] * x.shape[3]
        grad_x = (inv_std[None, :, None, None] / count) * (
            count * g_hat
            - g_hat.sum(axis=axes)[None, :, None, None]
            - x_hat * (g_hat * x_hat).sum(axis=axes)[None, :, None, None]
        )
    else:
        grad_x = g_hat * inv_std[None, :, None, None]
    return [grad_x, grad_gamma, grad_beta]


# ---------------------------------------------------------------- elementwise

def _leaky_forward(xs, attrs):
    x = xs[0]
    slope = attrs.get("slope", LEAKY_SLOPE)
    return np.where(x > 0, x, slope * x).astype(x.dtype, copy=False), None


def _leaky_backward(g, xs, out, saved, attrs):
    slope = attrs.get("slope", LEAKY_SLOPE)
    return [g * np.where(xs[0] > 0, 1.0, slope).astype(g.dtype)]


def _concat_forward(xs, attrs):
    return np.concatenate(xs, axis=1), None


def _concat_backward(g, xs, out, saved, attrs):
    bounds = np.cumsum([x.shape[1] for x in xs])[:-1]
    return [np.ascontiguousarray(part) for part in np.split(g, bounds, axis=1)]


def _unary(forward: Callable[[np.ndarray, Dict[str, Any]], np.ndarray],
           derivative: Callable[[np.ndarray, np.ndarray, Dict[str, Any]], np.ndarray]) -> OpKernel:
    """Build a kernel for an elementwise op from f(x) and f'(x, f(x))"""

    def _forward(xs, attrs):
        return forward(xs[0], attrs), None

    def _backward(g, xs, out, saved, attrs):
        return [g * derivative(xs[0], out, attrs)]

    return OpKernel(_same_shape, _forward, _backward)


def _binary(forward: Callable[[np.ndarray, np.ndarray], np.ndarray],
            backward: Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]) -> OpKernel:

    def _forward(xs, attrs):
        return forward(xs[0], xs[1]), None

    def _backward(g, xs, out, saved, attrs):
        ga, gb = backward(g, xs[0], xs[1])
        return [_unbroadcast(ga, xs[0].shape), _unbroadcast(gb, xs[1].shape)]

    return OpKernel(_broadcast_shape, _forward, _backward)


def _mean_forward(xs, attrs):
    return np.array([xs[0].mean()], dtype=xs[0].dtype), None


def _mean_backward(g, xs, out, saved, attrs):
    return [np.full(xs[0].shape, g[0] / xs[0].size, dtype=xs[0].dtype)]


def _sum_forward(xs, attrs):
    return np.array([xs[0].sum()], dtype=xs[0].dtype), None


def _sum_backward(g, xs, out, saved, attrs):
    return [np.full(xs[0].shape, g[0], dtype=xs[0].dtype)]


KERNELS: Dict[str, OpKernel] = {
    "conv2d": OpKernel(_conv2d_shape, _conv2d_forward, _conv2d_backward),
    "conv_transpose2d": OpKernel(_conv_transpose2d_shape, _conv_transpose2d_forward, _conv_transpose2d_backward),
    "batchnorm2d": OpKernel(_batchnorm_shape, _batchnorm_forward, _batchnorm_backward),
    "leaky_relu": OpKernel(_same_shape, _leaky_forward, _leaky_backward),
    "relu": _unary(lambda x, a: np.maximum(x, 0).astype(x.dtype, copy=False),
                   lambda x, y, a: (x > 0).astype(x.dtype)),
    "sigmoid": _unary(lambda x, a: expit(x), lambda x, y, a: y * (1 - y)),
    "tanh": _unary(lambda x, a: np.tanh(x), lambda x, y, a: 1 - y * y),
    "softplus": _unary(lambda x, a: np.logaddexp(0, x).astype(x.dtype, copy=False),
                       lambda x, y, a: expit(x)),
    "exp": _unary(lambda x, a: np.exp(x), lambda x, y, a: y),
    "log": _unary(lambda x, a: np.log(x), lambda x, y, a: 1 / x),
    "abs": _unary(lambda x, a: np.abs(x), lambda x, y, a: np.sign(x)),
    "square": _unary(lambda x, a: x * x, lambda x, y, a: 2 * x),
    "scalar_mul": _unary(lambda x, a: (x * a["factor"]).astype(x.dtype, copy=False),
                         lambda x, y, a: np.full_like(x, a["factor"])),
    "concat_channels": OpKernel(_concat_shape, _concat_forward, _concat_backward),
    "add": _binary(lambda a, b: a + b, lambda g, a, b: (g, g)),
    "sub": _binary(lambda a, b: a - b, lambda g, a, b: (g, -g)),
    "mul": _binary(lambda a, b: a * b, lambda g, a, b: (g * b, g * a)),
    "mean": OpKernel(_reduce_shape, _mean_forward, _mean_backward),
    "sum": OpKernel(_reduce_shape, _sum_forward, _sum_backward),
}
