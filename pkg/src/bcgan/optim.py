"""
ADAM optimizer
Bias-corrected first/second moment updates with per-parameter state
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from src.bcgan.autodiff import Tensor
from src.bcgan.config import TrainConfig
from src.bcgan.errors import CheckpointError, ShapeError


@dataclass
class AdamState:
    """Moment buffers and step counter of one parameter"""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, cfg: TrainConfig) -> Tuple[np.ndarray, AdamState]:
    """
    One bias-corrected ADAM update

    Args:
        param: Current parameter values
        grad: Gradient of the loss with respect to param
        state: Moment buffers for param
        cfg: Supplies learning_rate, beta1, beta2 and adam_epsilon

    Returns:
        (new parameter array, new state); the inputs are left untouched
    """
    if grad.shape != param.shape or state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeError(f"adam_step: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    step = state.step + 1
    g = grad.astype(np.float64)
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = m / (1.0 - cfg.beta1 ** step)
    v_hat = v / (1.0 - cfg.beta2 ** step)
    update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    new_param = (param.astype(np.float64) - update).astype(param.dtype)
    return new_param, AdamState(m, v, step)


class Adam:
    """ADAM over a named parameter set"""

    def __init__(self, params: Mapping[str, Tensor], cfg: TrainConfig):
        self.params = OrderedDict(params)
        self.cfg = cfg
        self.states: Dict[str, AdamState] = {name: AdamState.zeros_like(p.data) for name, p in self.params.items()}

    @property
    def step_count(self) -> int:
        return max((state.step for state in self.states.values()), default=0)

    def step(self, names: Optional[Iterable[str]] = None) -> None:
        """Update every parameter (or the named subset) from its grad buffer; missing grads count as zero"""
        for name in names if names is not None else self.params:
            param = self.params[name]
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            param.data, self.states[name] = adam_step(param.data, grad, self.states[name], self.cfg)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, adam in self.states.items():
            state[f"{name}.m"] = adam.m
            state[f"{name}.v"] = adam.v
            state[f"{name}.step"] = np.array([adam.step], dtype=np.float64)
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for name, param in self.params.items():
            try:
                m, v, step = state[f"{name}.m"], state[f"{name}.v"], state[f"{name}.step"]
            except KeyError as exc:
                raise CheckpointError(f"optimizer state lacks {exc.args[0]}") from exc
            if m.shape != param.shape or v.shape != param.shape:
                raise CheckpointError(f"optimizer state for '{name}' has shape {m.shape}, expected {param.shape}")
            self.states[name] = AdamState(m.astype(np.float64), v.astype(np.float64), int(round(float(step[0]))))
