"""
Bayesian dropout layers
Concrete dropout (relaxed gate, application, KL regularizer) and Monte Carlo dropout
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.special import entr, expit, logit

from src.bcgan.autodiff import (Node, OpNode, Tensor, add, constant, exp, log, mul, scalar_mul,
                                sigmoid, sub)
from src.bcgan.errors import DropoutError, ShapeError

UNIFORM_CLAMP = 1e-7


class DropoutMode(str, Enum):
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


@dataclass
class ConcreteDropoutParams:
    """Trainable dropout probability (as a logit) and regularizer settings of one layer"""

    logit_p: Tensor
    temperature: float
    weight_reg_coeff: float
    dropout_reg_coeff: float
    input_channels: int

    def __post_init__(self):
        if self.logit_p.shape != (1,):
            raise DropoutError(f"logit_p must be a scalar tensor, got shape {self.logit_p.shape}")
        if not self.temperature > 0:
            raise DropoutError(f"temperature must be positive, got {self.temperature}")
        if self.weight_reg_coeff < 0 or self.dropout_reg_coeff < 0:
            raise DropoutError("regularizer coefficients must be non-negative")
        if self.input_channels < 1:
            raise DropoutError(f"input_channels must be positive, got {self.input_channels}")

    @property
    def p(self) -> float:
        return float(expit(self.logit_p.item()))

    @classmethod
    def initial(cls, p: float, temperature: float, weight_reg_coeff: float, dropout_reg_coeff: float,
                input_channels: int, name: Optional[str] = None) -> "ConcreteDropoutParams":
        logit_p = Tensor([logit(p)], requires_grad=True, name=name, dtype=np.float32)
        return cls(logit_p, temperature, weight_reg_coeff, dropout_reg_coeff, input_channels)


@dataclass(frozen=True)
class BernoulliDropoutParams:
    """Fixed drop probability of a Monte Carlo dropout layer"""

    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DropoutError(f"dropout rate must lie in [0, 1), got {self.rate}")


def concrete_gate(p: Union[float, np.ndarray], t: float, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Relaxed Bernoulli gate; values near 1 mean "dropped"

    Args:
        p: Dropout probability in (0, 1)
        t: Temperature > 0
        u: Uniform sample(s) in the open interval (0, 1)

    Returns:
        sigmoid((log p - log(1-p) + log u - log(1-u)) / t)
    """
    p_arr = np.asarray(p, dtype=np.float64)
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise DropoutError("p must lie strictly inside (0, 1)")
    if not t > 0:
        raise DropoutError(f"temperature must be positive, got {t}")
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise DropoutError("u must lie strictly inside (0, 1); 0 and 1 give an infinite logit")
    gate = expit((logit(p_arr) + logit(u_arr)) / t)
    return float(gate) if np.ndim(gate) == 0 else gate


def _batch_channels(x: Node) -> tuple:
    if len(x.shape) != 4:
        raise ShapeError(f"dropout expects a 4-D activation, got shape {x.shape}")
    return x.shape[0], x.shape[1]


def concrete_apply(x: Node, params: ConcreteDropoutParams, rng: Optional[np.random.Generator],
                   mode: DropoutMode = DropoutMode.STOCHASTIC, per_element: bool = False) -> Node:
    """
    Apply concrete dropout to a 4-D activation

    Stochastic mode draws one u per (batch, channel) (per element when per_element
    is set) and returns x * (1 - gate) / (1 - p); p stays in the graph through
    both the gate and the scale. Deterministic mode returns x unchanged.
    """
    batch, channels = _batch_channels(x)
    if channels != params.input_channels:
        raise ShapeError(f"concrete dropout built for {params.input_channels} channels, got {channels}")
    if DropoutMode(mode) is DropoutMode.DETERMINISTIC:
        return x
    if rng is None:
        raise DropoutError("stochastic concrete dropout needs a random stream")
    noise_shape = x.shape if per_element else (batch, channels, 1, 1)
    u = np.clip(rng.uniform(size=noise_shape), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    logit_u = constant(logit(u), like=x)
    # log p - log(1 - p) is logit_p itself
    gate = sigmoid(scalar_mul(add(params.logit_p, logit_u), 1.0 / params.temperature))
    keep = sub(1.0, gate)
    inverse_retain = add(exp(params.logit_p), 1.0)  # 1 / (1 - p) == 1 + e^logit_p
    return mul(x, mul(keep, inverse_retain))


def bernoulli_entropy(p: float) -> float:
    """Entropy in nats of a Bernoulli(p) variable, with 0 log 0 = 0"""
    if not 0.0 <= p <= 1.0:
        raise DropoutError(f"p must lie in [0, 1], got {p}")
    return float(entr(p) + entr(1.0 - p))


def concrete_regularizer(params: ConcreteDropoutParams, weight_sq_norm: Node) -> OpNode:
    """
    KL regularizer term of one concrete dropout layer

    Args:
        params: Layer dropout parameters
        weight_sq_norm: Scalar node holding the squared l2 norm of the preceding weights

    Returns:
        c_w * (1 - p) * ||M||^2 - c_d * K * H(p), differentiable in logit_p and the weights
    """
    if weight_sq_norm.shape != (1,):
        raise ShapeError(f"weight_sq_norm must be scalar, got shape {weight_sq_norm.shape}")
    if isinstance(weight_sq_norm, Tensor) and weight_sq_norm.item() < 0:
        raise DropoutError("weight_sq_norm must be non-negative")
    p = sigmoid(params.logit_p)
    q = sigmoid(scalar_mul(params.logit_p, -1.0))
    neg_entropy = add(mul(p, log(p)), mul(q, log(q)))
    weight_term = scalar_mul(mul(q, weight_sq_norm), params.weight_reg_coeff)
    entropy_term = scalar_mul(neg_entropy, params.dropout_reg_coeff * params.input_channels)
    return add(weight_term, entropy_term)


def mc_dropout_apply(x: Node, params: BernoulliDropoutParams, rng: Optional[np.random.Generator],
                     mode: DropoutMode = DropoutMode.STOCHASTIC, per_element: bool = False) -> Node:
    """
    Hard Bernoulli channel dropout with inverted 1/(1 - rate) scaling

    Stochastic mode is used both while training and during dropout testing.
    """
    batch, channels = _batch_channels(x)
    if DropoutMode(mode) is DropoutMode.DETERMINISTIC or params.rate == 0.0:
        return x
    if rng is None:
        raise DropoutError("stochastic Monte Carlo dropout needs a random stream")
    noise_shape = x.shape if per_element else (batch, channels, 1, 1)
    keep = rng.uniform(size=noise_shape) >= params.rate
    mask = constant(keep / (1.0 - params.rate), like=x)
    return mul(x, mask)


class ConcreteDropout:
    """Concrete dropout layer placed after a transposed-conv block"""

    def __init__(self, index: int, params: ConcreteDropoutParams, per_element: bool = False):
        self.index = index
        self.params = params
        self.per_element = per_element

    @property
    def param_name(self) -> str:
        return f"concrete.{self.index}.logit_p"

    @property
    def p(self) -> float:
        return self.params.p

    def __call__(self, x: Node, rng: Optional[np.random.Generator], mode: DropoutMode) -> Node:
        return concrete_apply(x, self.params, rng, mode, self.per_element)

    def regularizer(self, weight_sq_norm: Node) -> OpNode:
        return concrete_regularizer(self.params, weight_sq_norm)


class MonteCarloDropout:
    """Fixed-rate dropout layer, the Monte Carlo dropout baseline"""

    def __init__(self, index: int, params: BernoulliDropoutParams, per_element: bool = False):
        self.index = index
        self.params = params
        self.per_element = per_element

    @property
    def p(self) -> float:
        return self.params.rate

    def __call__(self, x: Node, rng: Optional[np.random.Generator], mode: DropoutMode) -> Node:
        return mc_dropout_apply(x, self.params, rng, mode, self.per_element)
