"""Adam with bias correction over lists of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> AdamState:
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(_arr(p)) for p in params]
        state.second_moment = [np.zeros_like(_arr(p)) for p in params]
        return state


def _arr(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else np.asarray(p)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """Apply one Adam update in place to ``params`` and advance ``state``."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ValueError(
            f"adam_step: {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} moment slots"
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"adam_step shape mismatch: param {p.shape}, grad {np.shape(g)}, moment {m.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
