"""Layer descriptors, the feed-forward network container, and training.

A network is a stack of :class:`LayerSpec` entries ending in a softmax
output.  Parameter shapes are inferred from the input shape at
construction, weights are drawn from a splitmix64 stream seeded with
``seed + layer_index`` (Glorot-uniform bounds, biases zero), and the
backward pass folds the cross-entropy gradient through the softmax so
that ``dlogits = probs - onehot``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeError, TrainingError
from ..rng import derive_seed, uniform_stream
from . import ops

KIND_CONV = "conv"
KIND_MAXPOOL = "maxpool"
KIND_RELU = "relu"
KIND_FLATTEN = "flatten"
KIND_DENSE = "dense"
KIND_SOFTMAX = "softmax_output"

_KINDS = (KIND_CONV, KIND_MAXPOOL, KIND_RELU, KIND_FLATTEN, KIND_DENSE, KIND_SOFTMAX)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the architecture vocabulary.

    Only the fields relevant to ``kind`` are set; the rest stay None.
    """

    kind: str
    out_channels: Optional[int] = None
    kernel_size: Optional[int] = None
    stride: Optional[int] = None
    padding: Optional[int] = None
    window: Optional[int] = None
    units: Optional[int] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == KIND_CONV:
            if self.out_channels is None or self.out_channels < 1:
                raise ShapeError("conv out_channels must be >= 1")
            if self.kernel_size is None or self.kernel_size < 1:
                raise ShapeError("conv kernel_size must be >= 1")
            if self.stride is None or self.stride < 1:
                raise ShapeError("conv stride must be >= 1")
            if self.padding is None or self.padding < 0:
                raise ShapeError("conv padding must be >= 0")
        elif self.kind == KIND_MAXPOOL:
            if self.window is None or self.window < 1:
                raise ShapeError("maxpool window must be >= 1")
            if self.stride is None or self.stride < 1:
                raise ShapeError("maxpool stride must be >= 1")
        elif self.kind == KIND_DENSE:
            if self.units is None or self.units < 1:
                raise ShapeError("dense units must be >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("out_channels", "kernel_size", "stride", "padding", "window", "units"):
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {"kind", "out_channels", "kernel_size", "stride", "padding", "window", "units"}
        unknown = set(d) - known
        if unknown:
            raise ShapeError(f"unknown layer spec keys: {sorted(unknown)}")
        return cls(**d)


def conv(out_channels: int, kernel_size: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec(
        KIND_CONV,
        out_channels=out_channels,
        kernel_size=kernel_size,
        stride=stride,
        padding=padding,
    )


def max_pool(window: int, stride: Optional[int] = None) -> LayerSpec:
    return LayerSpec(KIND_MAXPOOL, window=window, stride=window if stride is None else stride)


def relu_spec() -> LayerSpec:
    return LayerSpec(KIND_RELU)


def flatten() -> LayerSpec:
    return LayerSpec(KIND_FLATTEN)


def dense(units: int) -> LayerSpec:
    return LayerSpec(KIND_DENSE, units=units)


def softmax_output() -> LayerSpec:
    return LayerSpec(KIND_SOFTMAX)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch gradient-descent parameters shared by every base model."""

    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


class Network:
    """A feed-forward stack with explicit forward/backward passes.

    Parameters live in ``self.params``, a list parallel to ``layers``
    where parametric layers hold a ``(weights, bias)`` tuple and all
    others an empty tuple.
    """

    def __init__(self, layers, input_shape: tuple[int, int, int], seed: int = 0):
        layers = tuple(layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        if layers[-1].kind != KIND_SOFTMAX:
            raise ShapeError("network must end with a softmax output layer")
        if sum(1 for l in layers if l.kind == KIND_SOFTMAX) != 1:
            raise ShapeError("network must contain exactly one softmax output layer")
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.num_classes = 0
        self.params: list[tuple[np.ndarray, ...]] = []
        self._build()

    def _build(self) -> None:
        shape = self.input_shape  # (C, H, W) until flattened, then (d,)
        for index, spec in enumerate(self.layers):
            layer_seed = derive_seed(self.seed, index)
            if spec.kind == KIND_CONV:
                if len(shape) != 3:
                    raise ShapeError(f"layer {index}: conv needs spatial input, got {shape}")
                c, h, w = shape
                k, s, p = spec.kernel_size, spec.stride, spec.padding
                if k > h + 2 * p or k > w + 2 * p:
                    raise ShapeError(
                        f"layer {index}: kernel {k} larger than padded input {h + 2 * p}x{w + 2 * p}"
                    )
                h2 = ops.conv_output_size(h, k, s, p)
                w2 = ops.conv_output_size(w, k, s, p)
                if h2 < 1 or w2 < 1:
                    raise ShapeError(f"layer {index}: conv output collapses to {h2}x{w2}")
                fan_in, fan_out = c * k * k, spec.out_channels * k * k
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                kernels = uniform_stream(
                    layer_seed, spec.out_channels * c * k * k, -limit, limit
                ).reshape(spec.out_channels, c, k, k)
                self.params.append((kernels, np.zeros(spec.out_channels)))
                shape = (spec.out_channels, h2, w2)
            elif spec.kind == KIND_MAXPOOL:
                if len(shape) != 3:
                    raise ShapeError(f"layer {index}: maxpool needs spatial input, got {shape}")
                c, h, w = shape
                if spec.window > h or spec.window > w:
                    raise ShapeError(
                        f"layer {index}: pool window {spec.window} larger than input {h}x{w}"
                    )
                h2 = ops.conv_output_size(h, spec.window, spec.stride, 0)
                w2 = ops.conv_output_size(w, spec.window, spec.stride, 0)
                self.params.append(())
                shape = (c, h2, w2)
            elif spec.kind == KIND_RELU:
                self.params.append(())
            elif spec.kind == KIND_FLATTEN:
                if len(shape) != 3:
                    raise ShapeError(f"layer {index}: flatten needs spatial input, got {shape}")
                self.params.append(())
                shape = (int(np.prod(shape)),)
            elif spec.kind == KIND_DENSE:
                if len(shape) != 1:
                    raise ShapeError(f"layer {index}: dense needs flattened input, got {shape}")
                d, u = shape[0], spec.units
                limit = np.sqrt(6.0 / (d + u))
                weights = uniform_stream(layer_seed, u * d, -limit, limit).reshape(u, d)
                self.params.append((weights, np.zeros(u)))
                shape = (u,)
            elif spec.kind == KIND_SOFTMAX:
                if len(shape) != 1:
                    raise ShapeError(f"layer {index}: softmax needs flattened input, got {shape}")
                if shape[0] < 2:
                    raise ShapeError(f"layer {index}: softmax needs >= 2 logits, got {shape[0]}")
                self.params.append(())
                self.num_classes = shape[0]
        self.output_shape = shape

    def parameter_arrays(self) -> list[np.ndarray]:
        """All parameter arrays in layer order (weights before bias)."""
        return [arr for group in self.params for arr in group]

    def set_parameter_arrays(self, arrays) -> None:
        arrays = list(arrays)
        expected = self.parameter_arrays()
        if len(arrays) != len(expected):
            raise ShapeError(f"expected {len(expected)} parameter arrays, got {len(arrays)}")
        it = iter(arrays)
        rebuilt = []
        for group in self.params:
            new_group = []
            for old in group:
                new = np.asarray(next(it), dtype=np.float64)
                if new.shape != old.shape:
                    raise ShapeError(f"parameter shape {new.shape} does not match {old.shape}")
                new_group.append(new)
            rebuilt.append(tuple(new_group))
        self.params = rebuilt

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.parameter_arrays())

    def layer_parameter_counts(self) -> list[int]:
        return [sum(arr.size for arr in group) for group in self.params]

    def _forward(self, x: np.ndarray, keep_cache: bool):
        caches = [] if keep_cache else None
        for spec, group in zip(self.layers, self.params):
            if spec.kind == KIND_CONV:
                out = ops.conv2d_forward_batch(x, group[0], group[1], spec.stride, spec.padding)
                if keep_cache:
                    caches.append(x)
            elif spec.kind == KIND_MAXPOOL:
                out, argmax = ops.maxpool_forward_batch(x, spec.window, spec.stride)
                if keep_cache:
                    caches.append((argmax, x.shape))
            elif spec.kind == KIND_RELU:
                out = ops.relu(x)
                if keep_cache:
                    caches.append(x)
            elif spec.kind == KIND_FLATTEN:
                out = x.reshape(x.shape[0], -1)
                if keep_cache:
                    caches.append(x.shape)
            elif spec.kind == KIND_DENSE:
                out = ops.dense_forward_batch(x, group[0], group[1])
                if keep_cache:
                    caches.append(x)
            else:  # softmax output
                out = ops.softmax_batch(x)
                if keep_cache:
                    caches.append(None)
            x = out
        return x, caches

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for a (N, C, H, W) batch."""
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected batch of shape (N, {self.input_shape}), got {x.shape}")
        probs, _ = self._forward(x, keep_cache=False)
        return probs

    def predict_proba(self, frame: np.ndarray) -> np.ndarray:
        """Class probabilities for one model-ready (C, H, W) frame."""
        if frame.shape != self.input_shape:
            raise ShapeError(f"expected frame of shape {self.input_shape}, got {frame.shape}")
        return self.forward(frame[None])[0]

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        probs, _ = self._forward(x, keep_cache=False)
        return ops.cross_entropy_loss_batch(probs, labels)

    def loss_and_gradients(self, x: np.ndarray, labels: np.ndarray):
        """Mean batch loss plus mean parameter gradients in layer order."""
        probs, caches = self._forward(x, keep_cache=True)
        loss = ops.cross_entropy_loss_batch(probs, labels)
        grad = ops.softmax_cross_entropy_logit_grad_batch(probs, labels)
        grads: list[np.ndarray] = []
        for spec, group, cache in zip(
            reversed(self.layers), reversed(self.params), reversed(caches)
        ):
            if spec.kind == KIND_SOFTMAX:
                continue  # folded into the cross-entropy logit gradient
            if spec.kind == KIND_CONV:
                grad, gk, gb = ops.conv2d_backward_batch(
                    grad, cache, group[0], spec.stride, spec.padding
                )
                grads.extend([gb, gk])
            elif spec.kind == KIND_MAXPOOL:
                argmax, in_shape = cache
                grad = ops.maxpool_backward_batch(grad, argmax, in_shape)
            elif spec.kind == KIND_RELU:
                grad = ops.relu_backward(grad, cache)
            elif spec.kind == KIND_FLATTEN:
                grad = grad.reshape(cache)
            elif spec.kind == KIND_DENSE:
                grad, gw, gb = ops.dense_backward_batch(grad, cache, group[0])
                grads.extend([gb, gw])
        grads.reverse()
        return loss, grads


def finite_diff_gradient(
    network: Network, input: np.ndarray, label: int, epsilon: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference loss gradient for every parameter of the network.

    Slow by design; this is the independent oracle the backward pass is
    checked against.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    x = input[None]
    labels = np.array([label])
    grads = []
    for arr in network.parameter_arrays():
        grad = np.zeros_like(arr)
        flat_p, flat_g = arr.ravel(), grad.ravel()
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + epsilon
            loss_plus = network.loss(x, labels)
            flat_p[i] = original - epsilon
            loss_minus = network.loss(x, labels)
            flat_p[i] = original
            flat_g[i] = (loss_plus - loss_minus) / (2.0 * epsilon)
        grads.append(grad)
    return grads


def train_network(network: Network, x: np.ndarray, labels: np.ndarray, config: TrainConfig) -> float:
    """Mini-batch gradient descent; returns the final epoch's mean loss.

    Each epoch shuffles the sample order with a generator seeded from
    ``config.seed``; the last short batch is kept.  Deterministic for a
    fixed (architecture, data order, seed).
    """
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty sample set")
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds training-set size {n}")
    rng = np.random.default_rng(config.seed)
    final_epoch_loss = float("nan")
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = network.loss_and_gradients(x[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training loss became non-finite ({loss}); "
                    "consider a lower learning_rate"
                )
            updated = ops.sgd_step(network.parameter_arrays(), grads, config.learning_rate)
            network.set_parameter_arrays(updated)
            loss_sum += loss * batch.size
        final_epoch_loss = loss_sum / n
    return final_epoch_loss
