"""Network heads and the network registry.

Every head maps observations to algorithm-specific outputs and exposes
`forward`, `backward`, `parameters` and the parameter-snapshot helpers
shared through `Network`. Heads declare a `kind` so agents can check the
combination they are given:

    value         raw (batch, actions, K) outputs; scalar, categorical or quantile
    policy        categorical action logits
    policy_value  shared-body logits + state value
    actor         bounded deterministic action
    critic        Q(state, action)
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar

import numpy as np
from scipy.special import softmax

from deskrl.core.nncore import MLP, Activation, Dense, Matrix, Parameter, as_matrix, uniform_fan_in
from deskrl.errors import DimensionError, ParameterError, RegistryError, StateError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = [64, 64]


@dataclass
class NetworkSpec:
    """What to build: registry name, dims and variant-specific extras."""

    name: str
    in_dim: int
    out_dim: int
    hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ParameterError(f"network dims must be positive, got in={self.in_dim} out={self.out_dim}")
        if any(h <= 0 for h in self.hidden):
            raise ParameterError(f"hidden sizes must be positive, got {self.hidden}")


@dataclass(frozen=True)
class CategoricalSupport:
    """Evenly spaced return atoms z_0 = v_min ... z_{n-1} = v_max."""

    n_atoms: int = 51
    v_min: float = -10.0
    v_max: float = 10.0

    def __post_init__(self):
        if self.n_atoms < 2:
            raise ParameterError(f"a categorical support needs at least 2 atoms, got {self.n_atoms}")
        if not self.v_min < self.v_max:
            raise ParameterError(f"v_min must be below v_max, got [{self.v_min}, {self.v_max}]")

    @property
    def delta_z(self) -> float:
        return (self.v_max - self.v_min) / (self.n_atoms - 1)

    @property
    def atoms(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.n_atoms)


def dueling_q(value: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a'); the action axis is axis 1."""
    return value + advantage - advantage.mean(axis=1, keepdims=True)


def categorical_probs(logits: np.ndarray) -> np.ndarray:
    """Softmax over the atom axis (last axis) for every action."""
    return softmax(logits, axis=-1)


def expected_q(probs: np.ndarray, support: CategoricalSupport) -> np.ndarray:
    """Sum_i p_i z_i over the atom axis."""
    return probs @ support.atoms


def quantile_midpoints(n_quantiles: int) -> np.ndarray:
    """Fixed quantile fractions tau_i = (2i + 1) / 2N."""
    return (2.0 * np.arange(n_quantiles) + 1.0) / (2.0 * n_quantiles)


def quantile_values(raw: np.ndarray) -> np.ndarray:
    """Quantile heads emit theta directly; Q is their mean over the last axis."""
    return raw.mean(axis=-1)


def scale_action(squashed: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Map tanh outputs in [-1, 1] onto [low, high]."""
    return (high + low) / 2.0 + (high - low) / 2.0 * squashed


def _factorized(rng: np.random.Generator, size: int) -> np.ndarray:
    e = rng.standard_normal(size)
    return np.sign(e) * np.sqrt(np.abs(e))


class NoisyDense:
    """Linear layer with factorized Gaussian parameter noise.

    Training mode uses w = mu + sigma * (f(eps_in) f(eps_out)^T); evaluation
    mode uses mu only. Noise is cached until `reset_noise` is called.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        sigma_init: float = 0.5,
        rng: np.random.Generator | None = None,
        freeze_sigma: bool = False,
    ):
        if sigma_init < 0:
            raise ParameterError(f"sigma_init must be non-negative, got {sigma_init}")
        rng = rng if rng is not None else np.random.default_rng()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.freeze_sigma = freeze_sigma
        self.training = True
        sigma = sigma_init / math.sqrt(in_dim)
        self.weight_mu = Parameter(uniform_fan_in(rng, in_dim, (in_dim, out_dim)), name="weight_mu")
        self.weight_sigma = Parameter(np.full((in_dim, out_dim), sigma), name="weight_sigma")
        self.bias_mu = Parameter(uniform_fan_in(rng, in_dim, (1, out_dim)), name="bias_mu")
        self.bias_sigma = Parameter(np.full((1, out_dim), sigma), name="bias_sigma")
        self.epsilon_in = np.zeros(in_dim)
        self.epsilon_out = np.zeros(out_dim)
        self._input: Matrix | None = None
        self._noisy_forward = False

    def parameters(self) -> list[Parameter]:
        if self.freeze_sigma:
            return [self.weight_mu, self.bias_mu]
        return [self.weight_mu, self.weight_sigma, self.bias_mu, self.bias_sigma]

    def state_parameters(self) -> list[Parameter]:
        return [self.weight_mu, self.weight_sigma, self.bias_mu, self.bias_sigma]

    def reset_noise(self, rng: np.random.Generator) -> None:
        self.epsilon_in = _factorized(rng, self.in_dim)
        self.epsilon_out = _factorized(rng, self.out_dim)

    def _weights(self, training: bool) -> tuple[Matrix, Matrix]:
        if not training:
            return self.weight_mu.value, self.bias_mu.value
        weight = self.weight_mu.value + self.weight_sigma.value * np.outer(self.epsilon_in, self.epsilon_out)
        bias = self.bias_mu.value + self.bias_sigma.value * self.epsilon_out
        return weight, bias

    def forward(self, x: Matrix) -> Matrix:
        return noisy_forward(self, x, self.training)

    def backward(self, grad: Matrix) -> Matrix:
        if self._input is None:
            raise StateError("backward called before forward")
        d_weight = self._input.T @ grad
        d_bias = grad.sum(axis=0, keepdims=True)
        self.weight_mu.grad += d_weight
        self.bias_mu.grad += d_bias
        if self._noisy_forward:
            self.weight_sigma.grad += d_weight * np.outer(self.epsilon_in, self.epsilon_out)
            self.bias_sigma.grad += d_bias * self.epsilon_out
        weight, _ = self._weights(self._noisy_forward)
        return grad @ weight.T


def noisy_forward(layer: NoisyDense, x: Matrix, training: bool) -> Matrix:
    """Forward pass through a noisy layer using its cached noise when training."""
    x = as_matrix(x, layer.in_dim)
    weight, bias = layer._weights(training)
    layer._input = x
    layer._noisy_forward = training
    return x @ weight + bias


class Network:
    """Common interface for every registered head."""

    kind: ClassVar[str] = ""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.training = True

    def parameters(self) -> list[Parameter]:
        """Trainable parameters."""
        raise NotImplementedError

    def state_parameters(self) -> list[Parameter]:
        """Every parameter that defines the network's behaviour, trainable or not."""
        return self.parameters()

    def _noisy_layers(self) -> list[NoisyDense]:
        return []

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        for layer in self._noisy_layers():
            layer.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    @property
    def is_noisy(self) -> bool:
        return bool(self._noisy_layers())

    def reset_noise(self, rng: np.random.Generator) -> None:
        for layer in self._noisy_layers():
            layer.reset_noise(rng)

    def zero_grad(self) -> None:
        for p in self.state_parameters():
            p.zero_grad()

    def get_params(self) -> list[np.ndarray]:
        """Copies of every parameter value, in a stable order."""
        return [p.value.copy() for p in self.state_parameters()]

    def set_params(self, values: list[np.ndarray]) -> None:
        params = self.state_parameters()
        if len(values) != len(params):
            raise DimensionError(f"expected {len(params)} parameter arrays, got {len(values)}")
        for p, v in zip(params, values):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise DimensionError(f"parameter '{p.name}' expects shape {p.value.shape}, got {v.shape}")
            p.value[...] = v

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def _body(spec: NetworkSpec, in_dim: int, rng: np.random.Generator) -> MLP | None:
    if not spec.hidden:
        return None
    sizes = [in_dim] + list(spec.hidden)
    return MLP(sizes, activations=[Activation.RELU] * len(spec.hidden), rng=rng)


class ValueNetwork(Network):
    """Action-value head producing raw outputs of shape (batch, actions, K).

    value_type decides what K means: 1 for a scalar Q head, atom logits for
    a categorical head, quantile values for a quantile head. `dueling`
    splits the last layer into value and advantage streams; `noisy`
    replaces the last layer(s) with NoisyDense layers.
    """

    kind = "value"

    def __init__(
        self,
        spec: NetworkSpec,
        rng: np.random.Generator,
        *,
        dueling: bool = False,
        noisy: bool = False,
        value_type: str = "scalar",
    ):
        super().__init__(spec)
        self.n_actions = spec.out_dim
        self.dueling = dueling
        self.value_type = value_type
        extra = spec.extra
        self.support: CategoricalSupport | None = None
        if value_type == "categorical":
            n_atoms = int(extra.get("n_atoms", 51))
            if n_atoms == 1:
                # a single atom carries no distribution; the head degrades to a point estimate
                self.value_type = "scalar"
                self.n_outputs = 1
            else:
                self.support = CategoricalSupport(
                    n_atoms, float(extra.get("v_min", -10.0)), float(extra.get("v_max", 10.0))
                )
                self.n_outputs = n_atoms
        elif value_type == "quantile":
            self.n_outputs = int(extra.get("n_quantiles", 51))
            if self.n_outputs < 1:
                raise ParameterError(f"n_quantiles must be positive, got {self.n_outputs}")
        elif value_type == "scalar":
            self.n_outputs = 1
        else:
            raise ParameterError(f"unknown value_type '{value_type}'")

        self.body = _body(spec, spec.in_dim, rng)
        feature_dim = spec.hidden[-1] if spec.hidden else spec.in_dim
        sigma_init = float(extra.get("sigma_init", 0.5))
        freeze_sigma = bool(extra.get("noisy_sigma_frozen", False))

        def layer(out_dim: int):
            if noisy:
                return NoisyDense(feature_dim, out_dim, sigma_init, rng, freeze_sigma)
            return Dense(feature_dim, out_dim, Activation.IDENTITY, rng)

        if dueling:
            self.value_stream = layer(self.n_outputs)
            self.advantage_stream = layer(self.n_actions * self.n_outputs)
            self.heads = [self.value_stream, self.advantage_stream]
        else:
            self.head = layer(self.n_actions * self.n_outputs)
            self.heads = [self.head]

    def _noisy_layers(self) -> list[NoisyDense]:
        return [h for h in self.heads if isinstance(h, NoisyDense)]

    def parameters(self) -> list[Parameter]:
        params = self.body.parameters() if self.body else []
        return params + [p for h in self.heads for p in h.parameters()]

    def state_parameters(self) -> list[Parameter]:
        params = self.body.parameters() if self.body else []
        for h in self.heads:
            params += h.state_parameters() if isinstance(h, NoisyDense) else h.parameters()
        return params

    def forward(self, x: Matrix) -> np.ndarray:
        """Raw outputs of shape (batch, actions, K)."""
        x = as_matrix(x, self.spec.in_dim)
        features = self.body.forward(x) if self.body else x
        batch = x.shape[0]
        if self.dueling:
            value = self.value_stream.forward(features).reshape(batch, 1, self.n_outputs)
            advantage = self.advantage_stream.forward(features).reshape(batch, self.n_actions, self.n_outputs)
            return dueling_q(value, advantage)
        return self.head.forward(features).reshape(batch, self.n_actions, self.n_outputs)

    def backward(self, grad: np.ndarray) -> Matrix:
        grad = np.asarray(grad, dtype=np.float64)
        batch = grad.shape[0]
        if grad.shape[1:] != (self.n_actions, self.n_outputs):
            raise DimensionError(f"gradient shape {grad.shape} does not match head output")
        if self.dueling:
            d_value = grad.sum(axis=1)
            d_advantage = grad - grad.mean(axis=1, keepdims=True)
            d_features = self.value_stream.backward(d_value) + self.advantage_stream.backward(
                d_advantage.reshape(batch, -1)
            )
        else:
            d_features = self.head.backward(grad.reshape(batch, -1))
        return self.body.backward(d_features) if self.body else d_features

    def q_from_raw(self, raw: np.ndarray) -> np.ndarray:
        if self.value_type == "categorical":
            return expected_q(categorical_probs(raw), self.support)
        if self.value_type == "quantile":
            return quantile_values(raw)
        return raw[..., 0]

    def q_values(self, x: Matrix) -> np.ndarray:
        """Expected action values, shape (batch, actions)."""
        return self.q_from_raw(self.forward(x))


class PolicyNetwork(Network):
    """Categorical policy: logits over discrete actions."""

    kind = "policy"

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.mlp = MLP([spec.in_dim] + list(spec.hidden) + [spec.out_dim], rng=rng)

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()

    def forward(self, x: Matrix) -> Matrix:
        return self.mlp.forward(x)

    def backward(self, grad_logits: Matrix) -> Matrix:
        return self.mlp.backward(grad_logits)


class PolicyValueNetwork(Network):
    """Shared-body actor-critic: (logits, state values)."""

    kind = "policy_value"

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.body = _body(spec, spec.in_dim, rng)
        feature_dim = spec.hidden[-1] if spec.hidden else spec.in_dim
        self.policy_head = Dense(feature_dim, spec.out_dim, Activation.IDENTITY, rng)
        self.value_head = Dense(feature_dim, 1, Activation.IDENTITY, rng)

    def parameters(self) -> list[Parameter]:
        params = self.body.parameters() if self.body else []
        return params + self.policy_head.parameters() + self.value_head.parameters()

    def forward(self, x: Matrix) -> tuple[Matrix, np.ndarray]:
        features = self.body.forward(x) if self.body else as_matrix(x, self.spec.in_dim)
        return self.policy_head.forward(features), self.value_head.forward(features)[:, 0]

    def backward(self, grad_logits: Matrix, grad_values: np.ndarray) -> Matrix:
        d_features = self.policy_head.backward(grad_logits) + self.value_head.backward(
            np.asarray(grad_values, dtype=np.float64).reshape(-1, 1)
        )
        return self.body.backward(d_features) if self.body else d_features


def policy_head(network: Network, features: Matrix):
    """Logits (and values for a shared actor-critic) for a batch of observations."""
    if network.kind not in ("policy", "policy_value"):
        raise ParameterError(f"network kind '{network.kind}' has no policy head")
    return network.forward(features)


class DeterministicActor(Network):
    """Bounded deterministic policy a = center + half_range * tanh(mlp(s))."""

    kind = "actor"

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.low = np.asarray(spec.extra.get("action_low", -1.0), dtype=np.float64) * np.ones(spec.out_dim)
        self.high = np.asarray(spec.extra.get("action_high", 1.0), dtype=np.float64) * np.ones(spec.out_dim)
        if np.any(self.low >= self.high):
            raise ParameterError(f"action bounds must satisfy low < high, got {self.low} / {self.high}")
        self.mlp = MLP(
            [spec.in_dim] + list(spec.hidden) + [spec.out_dim], rng=rng, output_activation=Activation.TANH
        )

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()

    def forward(self, x: Matrix) -> Matrix:
        return deterministic_actor(self, x)

    def backward(self, grad_action: Matrix) -> Matrix:
        return self.mlp.backward(np.asarray(grad_action) * (self.high - self.low) / 2.0)


def deterministic_actor(actor: DeterministicActor, features: Matrix) -> Matrix:
    """Actor output squashed into its action bounds."""
    return scale_action(actor.mlp.forward(features), actor.low, actor.high)


class QCritic(Network):
    """Q(s, a) over the concatenated state-action vector."""

    kind = "critic"

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.action_dim = int(spec.extra.get("action_dim", 1))
        self.state_dim = spec.in_dim
        self.mlp = MLP([spec.in_dim + self.action_dim] + list(spec.hidden) + [1], rng=rng)

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()

    def forward(self, state: Matrix, action: Matrix) -> np.ndarray:
        return q_critic(self, state, action)

    def backward(self, grad_q: np.ndarray) -> tuple[Matrix, Matrix]:
        grad_in = self.mlp.backward(np.asarray(grad_q, dtype=np.float64).reshape(-1, 1))
        return grad_in[:, : self.state_dim], grad_in[:, self.state_dim :]


def q_critic(critic: QCritic, state: Matrix, action: Matrix) -> np.ndarray:
    """Scalar Q per row of (state, action)."""
    state = as_matrix(state, critic.state_dim)
    action = as_matrix(action, critic.action_dim)
    if state.shape[0] != action.shape[0]:
        raise DimensionError(f"state batch {state.shape[0]} != action batch {action.shape[0]}")
    return critic.mlp.forward(np.concatenate([state, action], axis=1))[:, 0]


NetworkFactory = Callable[[NetworkSpec, np.random.Generator], Network]

_NETWORKS: dict[str, NetworkFactory] = {}
_NETWORK_KINDS: dict[str, str] = {}


def register_network(name: str, kind: str):
    """Decorator adding a network factory under `name`."""

    def decorator(factory: NetworkFactory) -> NetworkFactory:
        _NETWORKS[name] = factory
        _NETWORK_KINDS[name] = kind
        return factory

    return decorator


def _value_factory(**options) -> NetworkFactory:
    return lambda spec, rng: ValueNetwork(spec, rng, **options)


register_network("discrete_q_network", "value")(_value_factory())
register_network("dueling_network", "value")(_value_factory(dueling=True))
register_network("noisy_network", "value")(_value_factory(noisy=True))
register_network("noisy_dueling_network", "value")(_value_factory(noisy=True, dueling=True))
register_network("categorical_network", "value")(_value_factory(value_type="categorical"))
register_network("categorical_dueling_network", "value")(
    _value_factory(value_type="categorical", dueling=True)
)
register_network("rainbow_network", "value")(
    _value_factory(value_type="categorical", dueling=True, noisy=True)
)
register_network("quantile_network", "value")(_value_factory(value_type="quantile"))
register_network("policy_network", "policy")(PolicyNetwork)
register_network("policy_value_network", "policy_value")(PolicyValueNetwork)
register_network("deterministic_policy_network", "actor")(DeterministicActor)
register_network("q_critic_network", "critic")(QCritic)


def network_names() -> list[str]:
    return sorted(_NETWORKS)


def network_kind(name: str) -> str:
    if name not in _NETWORKS:
        raise RegistryError("network", name, list(_NETWORKS))
    return _NETWORK_KINDS[name]


def registry_build(spec: NetworkSpec, rng: np.random.Generator | None = None) -> Network:
    """Build the registered network named by `spec.name`."""
    if spec.name not in _NETWORKS:
        raise RegistryError("network", spec.name, list(_NETWORKS))
    rng = rng if rng is not None else np.random.default_rng()
    logger.debug(f"Building network {spec.name} ({spec.in_dim} -> {spec.out_dim}, hidden={spec.hidden})")
    return _NETWORKS[spec.name](spec, rng)


def registry_listing() -> str:
    """Plain-text listing, one network name per line."""
    return "\n".join(network_names()) + "\n"
