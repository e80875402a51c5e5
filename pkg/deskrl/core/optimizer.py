"""Gradient-based optimizers and the optimizer registry."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from deskrl.core.nncore import Matrix, Parameter
from deskrl.errors import ParameterError, RegistryError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter Adam moments."""

    m: Matrix
    v: Matrix
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameter(cls, param: Parameter, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(param.value), v=np.zeros_like(param.value), **hyper)


def adam_step(param: Parameter, state: AdamState) -> Matrix:
    """Apply one bias-corrected Adam update to `param` and zero its gradient."""
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.zero_grad()
    return param.value


def sgd_step(param: Parameter, lr: float) -> Matrix:
    """Plain gradient descent step; zeroes the gradient afterwards."""
    param.value -= lr * param.grad
    param.zero_grad()
    return param.value


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most `max_norm`.

    Returns:
        The scale factor applied (1.0 when the norm was already within bounds).
    """
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be positive, got {max_norm}")
    params = list(params)
    norm = global_grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= scale
    return scale


class Optimizer:
    """Updates a fixed list of parameters from their accumulated gradients."""

    def __init__(self, params: Iterable[Parameter], lr: float, clip_grad_norm: float | None = None):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.max_grad_norm = clip_grad_norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Clip (if configured) and update. Returns the pre-clip gradient norm."""
        norm = global_grad_norm(self.params)
        if self.max_grad_norm is not None:
            clip_grad_norm(self.params, self.max_grad_norm)
        self._update()
        return norm

    def _update(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self) -> None:
        for p in self.params:
            sgd_step(p, self.lr)


class Adam(Optimizer):
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_grad_norm: float | None = None,
    ):
        super().__init__(params, lr, clip_grad_norm)
        self.states = [
            AdamState.for_parameter(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps) for p in self.params
        ]

    def _update(self) -> None:
        for p, state in zip(self.params, self.states):
            adam_step(p, state)


OptimizerFactory = Callable[..., Optimizer]

_OPTIMIZERS: dict[str, OptimizerFactory] = {}


def register_optimizer(name: str):
    """Class decorator adding an optimizer to the registry."""

    def decorator(factory: OptimizerFactory) -> OptimizerFactory:
        _OPTIMIZERS[name] = factory
        return factory

    return decorator


register_optimizer("adam")(Adam)
register_optimizer("sgd")(SGD)


def optimizer_names() -> list[str]:
    return sorted(_OPTIMIZERS)


def build_optimizer(
    name: str,
    params: Iterable[Parameter],
    lr: float,
    clip_grad_norm: float | None = None,
    **extra,
) -> Optimizer:
    """Build a registered optimizer over `params`."""
    if name not in _OPTIMIZERS:
        raise RegistryError("optimizer", name, list(_OPTIMIZERS))
    factory = _OPTIMIZERS[name]
    takes_moments = isinstance(factory, type) and issubclass(factory, Adam)
    kwargs = {k: v for k, v in extra.items() if takes_moments and k in ("beta1", "beta2", "eps")}
    logger.debug(f"Building optimizer {name} (lr={lr}, clip={clip_grad_norm})")
    return factory(params, lr=lr, clip_grad_norm=clip_grad_norm, **kwargs)
