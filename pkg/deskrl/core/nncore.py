"""Dense-matrix neural-network core: parameters, layers, MLPs and losses.

All arrays are float64 numpy matrices laid out as (batch, features).
Layers cache what they need during `forward` and accumulate gradients
into their `Parameter.grad` during `backward`; callers zero gradients
(or let the optimizer do it) between updates.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax

from deskrl.errors import DimensionError, NumericalError, ParameterError, StateError

Matrix = npt.NDArray[np.float64]


class Activation(str, Enum):
    """Element-wise nonlinearity applied after a dense layer."""

    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def as_matrix(x, cols: int | None = None) -> Matrix:
    """Coerce `x` to a finite 2-D float64 matrix, promoting vectors to one row."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} columns, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"matrix of shape {m.shape} contains NaN or inf")
    return m


@dataclass(eq=False)
class Parameter:
    """A trainable matrix and its accumulated gradient."""

    value: Matrix
    grad: Matrix = field(default=None)
    name: str = ""

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"gradient shape {self.grad.shape} does not match value shape {self.value.shape}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _activate(z: Matrix, activation: Activation) -> Matrix:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(z: Matrix, out: Matrix, activation: Activation) -> Matrix:
    if activation is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if activation is Activation.TANH:
        return 1.0 - out * out
    return np.ones_like(z)


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Matrix:
    """Uniform initialisation in +-1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Fully connected layer y = act(x @ W + b)."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: Activation | str = Activation.IDENTITY,
        rng: np.random.Generator | None = None,
    ):
        if in_dim <= 0 or out_dim <= 0:
            raise ParameterError(f"layer dims must be positive, got ({in_dim}, {out_dim})")
        rng = rng if rng is not None else np.random.default_rng()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = Activation(activation)
        self.weight = Parameter(uniform_fan_in(rng, in_dim, (in_dim, out_dim)), name="weight")
        self.bias = Parameter(uniform_fan_in(rng, in_dim, (1, out_dim)), name="bias")
        self._input: Matrix | None = None
        self._pre: Matrix | None = None
        self._out: Matrix | None = None

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: Matrix) -> Matrix:
        x = as_matrix(x, self.in_dim)
        z = x @ self.weight.value + self.bias.value
        out = _activate(z, self.activation)
        self._input, self._pre, self._out = x, z, out
        return out

    def backward(self, grad: Matrix) -> Matrix:
        if self._input is None:
            raise StateError("backward called before forward")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self._out.shape:
            raise DimensionError(
                f"upstream gradient shape {grad.shape} does not match output {self._out.shape}"
            )
        dz = grad * _activation_grad(self._pre, self._out, self.activation)
        self.weight.grad += self._input.T @ dz
        self.bias.grad += dz.sum(axis=0, keepdims=True)
        return dz @ self.weight.value.T


class MLP:
    """Stack of dense layers whose dims chain from `layer_sizes`.

    Args:
        layer_sizes: [in, hidden..., out]
        activations: one activation per layer; defaults to relu on hidden
            layers and `output_activation` on the last one
        rng: generator used for weight initialisation
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activations: Sequence[Activation | str] | None = None,
        rng: np.random.Generator | None = None,
        output_activation: Activation | str = Activation.IDENTITY,
    ):
        if len(layer_sizes) < 2:
            raise ParameterError(f"an MLP needs at least two layer sizes, got {list(layer_sizes)}")
        n_layers = len(layer_sizes) - 1
        if activations is None:
            activations = [Activation.RELU] * (n_layers - 1) + [output_activation]
        if len(activations) != n_layers:
            raise ParameterError(f"expected {n_layers} activations, got {len(activations)}")
        rng = rng if rng is not None else np.random.default_rng()
        self.layer_sizes = list(layer_sizes)
        self.layers = [
            Dense(layer_sizes[i], layer_sizes[i + 1], activations[i], rng) for i in range(n_layers)
        ]

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def cache(self) -> list[Matrix | None]:
        """Per-layer outputs of the last forward pass."""
        return [layer._out for layer in self.layers]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: Matrix) -> Matrix:
        out = as_matrix(x, self.in_dim)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad: Matrix) -> Matrix:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def huber_elementwise(err: Matrix, kappa: float = 1.0) -> tuple[Matrix, Matrix]:
    """Huber value and derivative for each entry of `err`."""
    if kappa <= 0:
        raise ParameterError(f"huber kappa must be positive, got {kappa}")
    abs_err = np.abs(err)
    quadratic = abs_err <= kappa
    values = np.where(quadratic, 0.5 * err * err, kappa * (abs_err - 0.5 * kappa))
    derivs = np.where(quadratic, err, kappa * np.sign(err))
    return values, derivs


def huber_loss(pred: Matrix, target: Matrix, kappa: float = 1.0) -> tuple[float, Matrix]:
    """Mean Huber loss of pred - target and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} does not match target {target.shape}")
    values, derivs = huber_elementwise(pred - target, kappa)
    return float(values.mean()), derivs / pred.size


def mse_loss(pred: Matrix, target: Matrix) -> tuple[float, Matrix]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} does not match target {target.shape}")
    err = pred - target
    return float(np.mean(err * err)), 2.0 * err / pred.size


def softmax_cross_entropy(logits: Matrix, target_probs: Matrix) -> tuple[np.ndarray, Matrix]:
    """Per-row cross-entropy -sum(m * log softmax(logits)) and d(row loss)/d(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    target_probs = np.asarray(target_probs, dtype=np.float64)
    if logits.shape != target_probs.shape:
        raise DimensionError(
            f"logits shape {logits.shape} does not match target {target_probs.shape}"
        )
    log_p = log_softmax(logits, axis=-1)
    losses = -np.sum(target_probs * log_p, axis=-1)
    grad = softmax(logits, axis=-1) * target_probs.sum(axis=-1, keepdims=True) - target_probs
    return losses, grad
