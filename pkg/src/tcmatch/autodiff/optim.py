"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..exceptions import ConfigurationError, ContractError
from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        b1, b2 = self.betas
        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigurationError("AdamW needs lr >= 0, eps > 0, weight_decay >= 0")
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigurationError(f"AdamW betas must lie in [0, 1), got {self.betas}")


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(str(i), p) for i, p in enumerate(params)]


def adamw_step(params: Mapping[str, Tensor] | Iterable[Tensor], state: AdamWState) -> None:
    """Apply one in-place AdamW update. Gradients are left untouched."""
    named = _named(params)
    for name, p in named:
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; call backward() first")
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in named:
        g = p.grad
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
        v = state.exp_avg_sq[name]
        if m.shape != p.data.shape:
            raise ContractError(f"moment buffer for {name!r} has shape {m.shape}, parameter has {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        denom = np.sqrt(v / bc2) + state.eps
        p.data -= (state.lr / bc1) * m / denom


class AdamW:
    """Thin stateful wrapper: ``opt.zero_grad(); loss.backward(); opt.step()``."""

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(params) if isinstance(params, Mapping) else dict(_named(params))
        self.state = AdamWState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad.fill(0.0)

    def step(self) -> None:
        adamw_step(self.params, self.state)
