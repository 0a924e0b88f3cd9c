"""
Differentiable kernels used by the backbone and the holistically-guided decoder.

Each kernel is a Function subclass (forward on raw arrays, backward returning
input gradients) plus a thin functional wrapper taking and returning Tensors.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from src.errors import DataValidationError, DimensionError
from src.tensor import Function, Tensor

IGNORE_INDEX = 255


def _channel(v: np.ndarray) -> np.ndarray:
    """Reshape a per-channel vector for broadcasting against (N, C, H, W)"""
    return v.reshape(1, -1, 1, 1)


def _require_4d(op: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.ndim != 4:
            raise DimensionError(op, a.shape, detail="expected a 4-D (N, C, H, W) tensor")


class Linear1x1(Function):
    """out[n,o,h,w] = sum_i weight[o,i] * x[n,i,h,w] + bias[o]"""

    def forward(self, x, weight, bias=None):
        _require_4d("conv1x1", x)
        if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
            raise DimensionError("conv1x1", x.shape, weight.shape,
                                 detail="input channels must equal weight columns")
        if bias is not None and bias.shape != (weight.shape[0],):
            raise DimensionError("conv1x1", weight.shape, bias.shape, detail="bias length must equal C_out")
        self.x = x
        self.weight = weight
        self.has_bias = bias is not None
        out = np.tensordot(weight, x, axes=([1], [1])).transpose(1, 0, 2, 3)
        if bias is not None:
            out = out + _channel(bias)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        dx = np.tensordot(self.weight, grad, axes=([0], [1])).transpose(1, 0, 2, 3)
        dw = np.tensordot(grad, self.x, axes=([0, 2, 3], [0, 2, 3]))
        if self.has_bias:
            return np.ascontiguousarray(dx), dw, grad.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dx), dw


class BatchNorm2d(Function):
    """
    Per-channel batch normalization with affine gamma/beta.

    Training mode normalizes with the batch statistics and folds them into the
    running estimates (running <- momentum * running + (1 - momentum) * batch).
    Evaluation mode normalizes with the running estimates.
    """

    def forward(self, x, gamma, beta, running_mean=None, running_var=None, training=True,
                momentum=0.9, eps=1e-5):
        _require_4d("batch_norm", x)
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionError("batch_norm", x.shape, gamma.shape, detail="gamma/beta length must equal C")
        self.training = training
        self.gamma = gamma
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if running_mean is not None:
                running_mean *= momentum
                running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
            if running_var is not None:
                running_var *= momentum
                running_var += (1.0 - momentum) * var.astype(running_var.dtype)
        else:
            mean = running_mean.astype(x.dtype)
            var = running_var.astype(x.dtype)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = (x - _channel(mean)) * _channel(self.inv_std)
        return _channel(gamma) * self.x_hat + _channel(beta)

    def backward(self, grad):
        axes = (0, 2, 3)
        dgamma = (grad * self.x_hat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dx_hat = grad * _channel(self.gamma)
        if not self.training:
            return dx_hat * _channel(self.inv_std), dgamma, dbeta
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        dx = (count * dx_hat
              - dx_hat.sum(axis=axes, keepdims=True)
              - self.x_hat * (dx_hat * self.x_hat).sum(axis=axes, keepdims=True))
        dx = dx * _channel(self.inv_std) / count
        return dx, dgamma, dbeta


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


def interpolation_axis(in_size: int, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Source taps for one axis under the half-pixel convention.

    src = (dst + 0.5) * in/out - 0.5, clamped to [0, in - 1].

    Returns:
        (i0, i1, frac) with out = (1 - frac) * x[i0] + frac * x[i1]
    """
    if in_size < 1 or out_size < 1:
        raise DataValidationError(f"bilinear_resize: sizes must be >= 1 (got {in_size} -> {out_size})")
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    return i0, i1, frac


def interpolation_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out, in) matrix of the same taps, used for the adjoint"""
    i0, i1, frac = interpolation_axis(in_size, out_size)
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(matrix, (rows, i0), 1.0 - frac)
    np.add.at(matrix, (rows, i1), frac)
    return matrix


def _lerp_axis(x: np.ndarray, axis: int, taps: Tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    i0, i1, frac = taps
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = -1
    # a + f * (b - a) keeps constants exact and is a pass-through when f == 0
    return a + frac.reshape(shape).astype(x.dtype) * (b - a)


class BilinearResize(Function):
    def forward(self, x, out_h, out_w):
        _require_4d("bilinear_resize", x)
        in_h, in_w = x.shape[2], x.shape[3]
        self.rows = interpolation_matrix(in_h, out_h).astype(x.dtype)
        self.cols = interpolation_matrix(in_w, out_w).astype(x.dtype)
        if (in_h, in_w) == (out_h, out_w):
            return x.copy()
        out = _lerp_axis(x, 2, interpolation_axis(in_h, out_h))
        return _lerp_axis(out, 3, interpolation_axis(in_w, out_w))

    def backward(self, grad):
        dx = np.einsum("ph,ncpq,qw->nchw", self.rows, grad, self.cols, optimize=True)
        return (dx,)


class SoftmaxSpatial(Function):
    """Softmax over all spatial locations of each (n, i) slice"""

    def forward(self, a):
        _require_4d("softmax_spatial", a)
        n, c, h, w = a.shape
        flat = a.reshape(n, c, h * w)
        shifted = flat - flat.max(axis=2, keepdims=True)
        e = np.exp(shifted)
        self.probs = e / e.sum(axis=2, keepdims=True)
        return self.probs.reshape(n, c, h, w)

    def backward(self, grad):
        n, c, h, w = grad.shape
        g = grad.reshape(n, c, h * w)
        dot = (g * self.probs).sum(axis=2, keepdims=True)
        return ((self.probs * (g - dot)).reshape(n, c, h, w),)


class ConcatChannels(Function):
    def forward(self, *xs):
        if not xs:
            raise DimensionError("concat_channels", (), detail="at least one input required")
        _require_4d("concat_channels", *xs)
        reference = xs[0].shape
        for x in xs[1:]:
            if (x.shape[0], x.shape[2], x.shape[3]) != (reference[0], reference[2], reference[3]):
                raise DimensionError("concat_channels", reference, x.shape, detail="N, H, W must agree")
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


class WeightedPool(Function):
    """codewords[n, d, i] = sum_{p,q} A[n, i, p, q] * B[n, d, p, q]"""

    def forward(self, basis, weights):
        _require_4d("weighted_pool", basis, weights)
        if (basis.shape[0], basis.shape[2], basis.shape[3]) != (weights.shape[0], weights.shape[2], weights.shape[3]):
            raise DimensionError("weighted_pool", basis.shape, weights.shape, detail="N, H, W must agree")
        n, d, h, w = basis.shape
        self.basis = basis.reshape(n, d, h * w)
        self.weights = weights.reshape(n, weights.shape[1], h * w)
        self.spatial = (h, w)
        return np.matmul(self.basis, self.weights.transpose(0, 2, 1))

    def backward(self, grad):
        h, w = self.spatial
        d_basis = np.matmul(grad, self.weights)
        d_weights = np.matmul(grad.transpose(0, 2, 1), self.basis)
        n = grad.shape[0]
        return d_basis.reshape(n, -1, h, w), d_weights.reshape(n, -1, h, w)


class Assemble(Function):
    """out[n, d, h, w] = sum_i W[n, i, h, w] * C[n, d, i]"""

    def forward(self, weights, codewords):
        _require_4d("assemble", weights)
        if codewords.ndim != 3 or codewords.shape[0] != weights.shape[0] or codewords.shape[2] != weights.shape[1]:
            raise DimensionError("assemble", weights.shape, codewords.shape,
                                 detail="W channels must equal the codeword count")
        n, k, h, w = weights.shape
        self.weights = weights.reshape(n, k, h * w)
        self.codewords = codewords
        self.spatial = (h, w)
        return np.matmul(codewords, self.weights).reshape(n, codewords.shape[1], h, w)

    def backward(self, grad):
        h, w = self.spatial
        n, d = grad.shape[:2]
        g = grad.reshape(n, d, h * w)
        d_weights = np.matmul(self.codewords.transpose(0, 2, 1), g)
        d_codewords = np.matmul(g, self.weights.transpose(0, 2, 1))
        return d_weights.reshape(n, -1, h, w), d_codewords


class GlobalAvg(Function):
    def forward(self, x):
        _require_4d("global_avg", x)
        if x.shape[2] * x.shape[3] < 1:
            raise DimensionError("global_avg", x.shape, detail="empty spatial extent")
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad):
        h, w = self.shape[2], self.shape[3]
        return (np.broadcast_to(grad / (h * w), self.shape).copy(),)


class AddBroadcast(Function):
    def forward(self, x, v):
        _require_4d("add_broadcast", x, v)
        if v.shape != (x.shape[0], x.shape[1], 1, 1):
            raise DimensionError("add_broadcast", x.shape, v.shape, detail="vector must be (N, D, 1, 1)")
        return x + v

    def backward(self, grad):
        return grad, grad.sum(axis=(2, 3), keepdims=True)


class CrossEntropyMask(Function):
    """Mean negative log-likelihood over pixels whose label is not ignore_index"""

    def forward(self, logits, labels=None, ignore_index=IGNORE_INDEX):
        _require_4d("cross_entropy_mask", logits)
        labels = np.asarray(labels)
        n, k, h, w = logits.shape
        if labels.shape != (n, h, w):
            raise DimensionError("cross_entropy_mask", logits.shape, labels.shape, detail="labels must be (N, H, W)")
        valid = labels != ignore_index
        if np.any((labels[valid] < 0) | (labels[valid] >= k)):
            bad = labels[valid][(labels[valid] < 0) | (labels[valid] >= k)][0]
            raise DataValidationError(f"cross_entropy_mask: label {bad} outside [0, {k}) and not ignore_index")
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1)
        safe = np.where(valid, labels, 0).astype(np.int64)
        picked = np.take_along_axis(shifted, safe[:, None], axis=1)[:, 0]
        nll = np.log(total) - picked
        self.count = int(valid.sum())
        self.probs = exp / total[:, None]
        self.valid = valid
        self.labels = safe
        loss = nll[valid].sum() / self.count if self.count else 0.0
        return np.asarray(loss, dtype=logits.dtype)

    def backward(self, grad):
        if self.count == 0:
            return (np.zeros_like(self.probs),)
        d = self.probs.copy()
        np.put_along_axis(d, self.labels[:, None], np.take_along_axis(d, self.labels[:, None], axis=1) - 1.0, axis=1)
        d *= self.valid[:, None]
        return (d * (grad / self.count),)


class Conv2d(Function):
    """General k x k convolution with stride, zero padding and dilation (im2col)"""

    def forward(self, x, weight, bias=None, stride=1, padding=0, dilation=1):
        _require_4d("conv2d", x, weight)
        if weight.shape[1] != x.shape[1]:
            raise DimensionError("conv2d", x.shape, weight.shape, detail="input channels must agree")
        n, c, h, w = x.shape
        _, _, kh, kw = weight.shape
        out_h = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
        out_w = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
        if out_h < 1 or out_w < 1:
            raise DimensionError("conv2d", x.shape, weight.shape, detail="output would be empty")
        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=np.result_type(x, weight))
        for i in range(kh):
            for j in range(kw):
                top, left = i * dilation, j * dilation
                cols[:, :, i, j] = padded[:, :, top:top + stride * (out_h - 1) + 1:stride,
                                          left:left + stride * (out_w - 1) + 1:stride]
        self.cols = cols
        self.weight = weight
        self.has_bias = bias is not None
        self.geometry = (x.shape, padded.shape, stride, padding, dilation)
        out = np.tensordot(weight, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
        if bias is not None:
            out = out + _channel(bias)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        x_shape, padded_shape, stride, padding, dilation = self.geometry
        _, _, kh, kw = self.weight.shape
        out_h, out_w = grad.shape[2], grad.shape[3]
        dw = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 4, 5]))
        dcols = np.tensordot(self.weight, grad, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
        dpadded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                top, left = i * dilation, j * dilation
                dpadded[:, :, top:top + stride * (out_h - 1) + 1:stride,
                        left:left + stride * (out_w - 1) + 1:stride] += dcols[:, :, i, j]
        h, w = x_shape[2], x_shape[3]
        dx = dpadded[:, :, padding:padding + h, padding:padding + w]
        if self.has_bias:
            return dx, dw, grad.sum(axis=(0, 2, 3))
        return dx, dw


def linear1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if bias is None:
        return Linear1x1.apply(x, weight)
    return Linear1x1.apply(x, weight, bias)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Optional[np.ndarray] = None,
               running_var: Optional[np.ndarray] = None, training: bool = True, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    return BatchNorm2d.apply(x, gamma, beta, running_mean=running_mean, running_var=running_var,
                             training=training, momentum=momentum, eps=eps)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Half-pixel bilinear interpolation with edge clamping; exact pass-through at equal size"""
    if out_h < 1 or out_w < 1:
        raise DataValidationError(f"bilinear_resize: output size must be >= 1 (got {out_h}x{out_w})")
    return BilinearResize.apply(x, out_h=int(out_h), out_w=int(out_w))


def softmax_spatial(a: Tensor) -> Tensor:
    return SoftmaxSpatial.apply(a)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    return ConcatChannels.apply(*xs)


def weighted_pool(basis: Tensor, weights: Tensor) -> Tensor:
    return WeightedPool.apply(basis, weights)


def assemble(weights: Tensor, codewords: Tensor) -> Tensor:
    return Assemble.apply(weights, codewords)


def global_avg(x: Tensor) -> Tensor:
    return GlobalAvg.apply(x)


def add_broadcast(x: Tensor, v: Tensor) -> Tensor:
    return AddBroadcast.apply(x, v)


def cross_entropy_mask(logits: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    return CrossEntropyMask.apply(logits, labels=labels, ignore_index=ignore_index)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding, dilation=dilation)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding, dilation=dilation)


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Class probabilities along axis 1 (no gradient)"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def argmax_mask(scores: np.ndarray) -> np.ndarray:
    """Per-pixel class index; the lowest index wins ties"""
    return np.argmax(scores, axis=1).astype(np.int64)
