"""Adam with per-group learning rates and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15,
              weight_decay: float = 0.0) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter array."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    out = param
    if weight_decay:
        out = out - lr * weight_decay * out
    return out - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Named parameter groups, each with its own learning rate and weight decay."""

    lrs: dict[str, float]
    weight_decay: dict[str, float] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for name, grad in grads.items():
            param = params[name]
            state = self.states.get(name)
            if state is None:
                state = self.states[name] = AdamState.zeros_like(param)
            out[name] = adam_step(param, grad, state, self.lrs[name], self.beta1, self.beta2, self.eps,
                                  self.weight_decay.get(name, 0.0))
        return out

    def remap_rows(self, names, source: np.ndarray) -> None:
        """Reindex per-Gaussian moment rows; ``source == -1`` rows start from zero."""
        for name in names:
            state = self.states.get(name)
            if state is None:
                continue
            for attr in ("m", "v"):
                old = getattr(state, attr)
                new = np.zeros((len(source),) + old.shape[1:])
                valid = source >= 0
                new[valid] = old[source[valid]]
                setattr(state, attr, new)
