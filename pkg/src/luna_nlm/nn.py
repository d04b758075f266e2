"""Deterministic feature map: a small feed-forward network with its own
reverse-mode gradient engine.

The feature map applies the activation after every layer, including the last
one, so features are post-activation values; the design matrix is the feature
matrix with a constant-1 column prepended (:func:`augment_bias`). The forward
pass caches pre-activations and activations (:class:`GradientTape`) and
:func:`backward` turns a feature-space cotangent into a flat parameter
gradient. Hot paths run in a compiled kernel when available (see
``luna_nlm._kernels``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import ACT_RELU, ACT_TANH, mlp_backward, mlp_forward

ACTIVATIONS = ("relu", "tanh")
_ACT_IDS = {"relu": ACT_RELU, "tanh": ACT_TANH}


@dataclass
class FeatureMapParams:
    """Layer weights/biases of the feature map.

    ``weights[l]`` has shape (fan_out, fan_in); ``biases[l]`` has shape
    (fan_out,). The last fan_out is the feature count L.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError("layer dimensions do not chain")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length does not match layer width")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_features(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_vector(self) -> np.ndarray:
        """Flat view of all parameters: per layer, W row-major then b."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def from_vector(self, theta: np.ndarray) -> "FeatureMapParams":
        """New params with the same shapes, entries taken from ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected vector of length {self.n_params}, got {theta.shape}")
        ws, bs = [], []
        k = 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[k : k + w.size].reshape(w.shape).copy())
            k += w.size
            bs.append(theta[k : k + b.size].copy())
            k += b.size
        return FeatureMapParams(ws, bs, self.activation)

    def copy(self) -> "FeatureMapParams":
        return FeatureMapParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


@dataclass
class GradientTape:
    """Cached forward-pass state for one batch."""

    activations: list[np.ndarray] = field(repr=False)
    preactivations: list[np.ndarray] = field(repr=False)

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[0]


def init_params(layer_sizes: list[int], activation: str, rng: np.random.Generator) -> FeatureMapParams:
    """Fan-based uniform init: W ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0."""
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return FeatureMapParams(ws, bs, activation)


def forward(params: FeatureMapParams, x_batch: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Feature matrix (N, L) plus the tape for a later backward pass."""
    x_batch = np.ascontiguousarray(np.atleast_2d(x_batch), dtype=np.float64)
    if x_batch.shape[1] != params.input_dim:
        raise ValueError(f"input has {x_batch.shape[1]} columns, feature map expects {params.input_dim}")
    acts, pres = mlp_forward(params.weights, params.biases, _ACT_IDS[params.activation], x_batch)
    return acts[-1], GradientTape(activations=acts, preactivations=pres)


def backward(
    params: FeatureMapParams,
    tape: GradientTape,
    feature_cotangent: np.ndarray,
    with_input_grad: bool = False,
):
    """Flat gradient d(loss)/d(theta) for a scalar loss with the given
    d(loss)/d(features); optionally also returns d(loss)/d(x_batch)."""
    feature_cotangent = np.ascontiguousarray(feature_cotangent, dtype=np.float64)
    feats = tape.activations[-1]
    if feature_cotangent.shape != feats.shape:
        raise ValueError(f"cotangent shape {feature_cotangent.shape} does not match features {feats.shape}")
    wgrads, bgrads, xgrad = mlp_backward(
        params.weights, _ACT_IDS[params.activation], tape.activations, tape.preactivations, feature_cotangent
    )
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(wgrads, bgrads)])
    if with_input_grad:
        return flat, xgrad
    return flat


def augment_bias(features: np.ndarray) -> np.ndarray:
    """Design matrix: constant-1 column prepended to the features."""
    features = np.atleast_2d(features)
    return np.column_stack([np.ones(features.shape[0]), features])


def scale_last_layer(params: FeatureMapParams, c: float) -> FeatureMapParams:
    """Last layer's weights and bias multiplied by c > 0.

    With ReLU activation the output features are exactly c times the
    originals (positive homogeneity); with Tanh they are not.
    """
    if c <= 0:
        raise ValueError(f"scale must be positive, got {c}")
    out = params.copy()
    out.weights[-1] *= c
    out.biases[-1] *= c
    return out
