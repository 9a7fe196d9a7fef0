"""Forward and backward kernels for the network layer vocabulary.

All arithmetic is float64.  Convolution is cross-correlation (no kernel
flip) over channels-first tensors, and every spatial size obeys

    out = floor((n + 2*padding - k) / stride) + 1

The public functions take single-sample tensors without a batch axis,
matching how per-frame inference sees the world.  The ``*_batch``
variants add a leading batch axis; they are what the training loop uses,
and the single-sample functions are thin wrappers over them so there is
exactly one implementation of each piece of math.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, TrainingError

PROB_CLIP = 1e-12


def _check_conv_args(stride: int, padding: int) -> None:
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output size of a convolution or pooling window sweep."""
    return (n + 2 * padding - kernel) // stride + 1


def _im2col(x_padded: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*H'*W', C*k*k) patch matrix."""
    windows = sliding_window_view(x_padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, h_out, w_out = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * k * k)


def conv2d_forward_batch(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0
) -> np.ndarray:
    """Cross-correlate a (N, C_in, H, W) batch with (C_out, C_in, k, k) kernels."""
    _check_conv_args(stride, padding)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"expected 4-d input and kernels, got {x.shape} and {kernels.shape}")
    n, c_in, h, w = x.shape
    c_out, kc_in, kh, kw = kernels.shape
    if kh != kw:
        raise ShapeError(f"kernels must be square, got {kh}x{kw}")
    k = kh
    if kc_in != c_in:
        raise ShapeError(f"kernel expects {kc_in} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"kernel {k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(w, k, stride, padding)
    cols = _im2col(x, k, stride)
    out = cols @ kernels.reshape(c_out, -1).T + bias
    return out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)


def conv2d_backward_batch(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``conv2d_forward_batch`` w.r.t. input, kernels, and bias."""
    _check_conv_args(stride, padding)
    n, c_in, h, w = x.shape
    c_out, _, k, _ = kernels.shape
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(w, k, stride, padding)
    if grad_out.shape != (n, c_out, h_out, w_out):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(n, c_out, h_out, w_out)}"
        )

    x_padded = (
        np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    )
    cols = _im2col(x_padded, k, stride)
    grad_mat = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)

    grad_kernels = (grad_mat.T @ cols).reshape(kernels.shape)
    grad_bias = grad_mat.sum(axis=0)

    # Scatter column gradients back onto the padded input plane.  For a
    # fixed kernel offset the target positions are a disjoint strided
    # slice, so += accumulates overlapping windows correctly.
    grad_cols = grad_mat @ kernels.reshape(c_out, -1)
    grad_win = grad_cols.reshape(n, h_out, w_out, c_in, k, k).transpose(0, 3, 1, 2, 4, 5)
    grad_padded = np.zeros_like(x_padded)
    for ki in range(k):
        for kj in range(k):
            grad_padded[
                :, :, ki : ki + stride * (h_out - 1) + 1 : stride,
                kj : kj + stride * (w_out - 1) + 1 : stride,
            ] += grad_win[:, :, :, :, ki, kj]
    if padding:
        grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
    else:
        grad_input = grad_padded
    return grad_input, grad_kernels, grad_bias


def conv2d_forward(
    input: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0
) -> np.ndarray:
    """Single-sample convolution: (C_in, H, W) -> (C_out, H', W')."""
    if input.ndim != 3:
        raise ShapeError(f"expected (C, H, W) input, got shape {input.shape}")
    return conv2d_forward_batch(input[None], kernels, bias, stride, padding)[0]


def conv2d_backward(
    grad_out: np.ndarray,
    cached_input: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-sample gradients for ``conv2d_forward``."""
    if grad_out.ndim != 3 or cached_input.ndim != 3:
        raise ShapeError(
            f"expected (C, H, W) tensors, got {grad_out.shape} and {cached_input.shape}"
        )
    gi, gk, gb = conv2d_backward_batch(grad_out[None], cached_input[None], kernels, stride, padding)
    return gi[0], gk, gb


def maxpool_forward_batch(
    x: np.ndarray, window: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Max pool a (N, C, H, W) batch.

    Returns the pooled output and, per output element, the flat index of
    its argmax into the input array.  Ties go to the first maximum in
    row-major order within the window.
    """
    if window < 1 or stride < 1:
        raise ShapeError(f"window and stride must be >= 1, got {window}, {stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2:4]
    flat = windows.reshape(n, c, h_out, w_out, window * window)
    local = flat.argmax(axis=4)
    out = np.take_along_axis(flat, local[..., None], axis=4)[..., 0]

    # Convert window-relative argmax to flat indices into x.
    oi = np.arange(h_out)[:, None] * stride
    oj = np.arange(w_out)[None, :] * stride
    rows = oi + local // window
    cols = oj + local % window
    plane = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
    indices = plane + rows * w + cols
    return out, indices


def maxpool_backward_batch(
    grad_out: np.ndarray, argmax_indices: np.ndarray, input_shape: tuple[int, ...]
) -> np.ndarray:
    """Route each output gradient to its argmax position, summing on overlap."""
    if grad_out.shape != argmax_indices.shape:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match argmax {argmax_indices.shape}"
        )
    total = int(np.prod(input_shape))
    grad = np.bincount(
        argmax_indices.ravel(), weights=grad_out.ravel(), minlength=total
    )
    return grad.reshape(input_shape)


def maxpool_forward(input: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample max pool: (C, H, W) -> ((C, H', W'), argmax indices)."""
    if input.ndim != 3:
        raise ShapeError(f"expected (C, H, W) input, got shape {input.shape}")
    out, idx = maxpool_forward_batch(input[None], window, stride)
    return out[0], idx[0]


def maxpool_backward(
    grad_out: np.ndarray, argmax_indices: np.ndarray, input_shape: tuple[int, ...]
) -> np.ndarray:
    """Single-sample max pool gradient for ``maxpool_forward``."""
    return maxpool_backward_batch(grad_out[None], argmax_indices[None], (1, *input_shape))[0]


def dense_forward_batch(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(N, d) @ (u, d)^T + (u,)."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"expected 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"input length {x.shape[1]} does not match weight columns {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias must have shape ({weights.shape[0]},), got {bias.shape}")
    return x @ weights.T + bias


def dense_backward_batch(
    grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the affine map w.r.t. input, weights, and bias."""
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"{(x.shape[0], weights.shape[0])}"
        )
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def dense_forward(input: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-vector affine map: W @ x + b."""
    if input.ndim != 1:
        raise ShapeError(f"expected 1-d input, got shape {input.shape}")
    return dense_forward_batch(input[None], weights, bias)[0]


def dense_backward(
    grad_out: np.ndarray, input: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-vector gradients for ``dense_forward``."""
    gi, gw, gb = dense_backward_batch(grad_out[None], input[None], weights)
    return gi[0], gw, gb


def relu(input: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(0.0, input)


def relu_backward(grad_out: np.ndarray, input: np.ndarray) -> np.ndarray:
    """Mask by x > 0; the gradient at exactly 0 is defined as 0."""
    if grad_out.shape != input.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input {input.shape}")
    return grad_out * (input > 0)


def softmax_batch(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(input: np.ndarray) -> np.ndarray:
    """Softmax over a single logit vector of length >= 2."""
    if input.ndim != 1 or input.shape[0] < 2:
        raise ShapeError(f"softmax needs a 1-d vector of length >= 2, got shape {input.shape}")
    return softmax_batch(input[None])[0]


def cross_entropy_loss(probs: np.ndarray, label: int) -> float:
    """-ln(p[label] + clip); the clip avoids -ln(0) on degenerate inputs."""
    if not 0 <= label < probs.shape[-1]:
        raise ShapeError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(probs[label] + PROB_CLIP))


def cross_entropy_loss_batch(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch of probability rows."""
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(picked + PROB_CLIP).mean())


def softmax_cross_entropy_logit_grad(probs: np.ndarray, label: int) -> np.ndarray:
    """Gradient of the composed softmax + cross-entropy w.r.t. the logits."""
    grad = probs.copy()
    grad[label] -= 1.0
    return grad


def softmax_cross_entropy_logit_grad_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Batch-mean logit gradient: (P - onehot) / N."""
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return grad / probs.shape[0]


def sgd_step(params, grads_batch_mean, learning_rate: float):
    """One mini-batch gradient-descent update: w <- w - lr * mean_grad.

    ``params`` and ``grads_batch_mean`` may be single arrays or parallel
    sequences of arrays; new arrays are returned, inputs are untouched.
    Raises ``TrainingError`` on any non-finite gradient.
    """
    single = isinstance(params, np.ndarray)
    param_list = [params] if single else list(params)
    grad_list = [grads_batch_mean] if single else list(grads_batch_mean)
    if len(param_list) != len(grad_list):
        raise ShapeError(f"{len(param_list)} params but {len(grad_list)} gradients")
    updated = []
    for i, (p, g) in enumerate(zip(param_list, grad_list)):
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeError(f"param {i} shape {p.shape} does not match gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in parameter {i}; training aborted "
                "(consider a lower learning_rate)"
            )
        updated.append(p - learning_rate * g)
    return updated[0] if single else updated
