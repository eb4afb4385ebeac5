"""Adam with bias correction, as a per-tensor state plus a dict-level wrapper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Return the updated parameter and advance ``state`` by one step.

    A non-finite gradient leaves both ``param`` and ``state`` untouched and
    raises :class:`NumericError`.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; Adam update skipped")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    state.m, state.v, state.step = m.astype(param.dtype), v.astype(param.dtype), t
    return (param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)


@dataclass
class Adam:
    """Adam over a dict of named parameters, updated in place."""

    params: dict[str, np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise NumericError(f"non-finite gradient for {bad}; update skipped")
        for name, g in grads.items():
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState.like(
                    self.params[name], lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
                )
            self.params[name] = adam_step(self.params[name], g, st)
