"""Optimizers: plain SGD and rmsprop.

Updates are per-parameter and independent, so the result never depends on
iteration order over the parameter list. A NaN gradient aborts the step
before any parameter moves, naming the offender.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NanGradient(RuntimeError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")
        self.param_name = name


def _check_finite(params: dict[str, Tensor]) -> None:
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NanGradient(name)


def sgd_step(params: dict[str, Tensor], lr: float) -> None:
    """p <- p - lr * g; parameters without a gradient stay put."""
    _check_finite(params)
    for p in params.values():
        if p.grad is not None:
            p.data -= (lr * p.grad).astype(p.data.dtype, copy=False)


class RmspropState:
    """Per-parameter squared-gradient moments."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 rho: float = 0.99, eps: float = 1e-8):
        if eps <= 0:
            raise ValueError("rmsprop eps must be positive")
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def state_arrays(self, prefix: str = "optim.") -> dict[str, np.ndarray]:
        return {prefix + name + ".v": buf for name, buf in self.v.items()}

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "optim.") -> None:
        for name, buf in self.v.items():
            key = prefix + name + ".v"
            if key not in state:
                raise ValueError(f"missing optimizer state {key}")
            if state[key].shape != buf.shape:
                raise ValueError(f"optimizer state shape mismatch for {key}")
            buf[...] = state[key]


def rmsprop_step(params: dict[str, Tensor], state: RmspropState) -> None:
    """v <- rho*v + (1-rho)*g^2; p <- p - lr*g/(sqrt(v)+eps)."""
    _check_finite(params)
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        v = state.v[name]
        v *= state.rho
        v += (1.0 - state.rho) * (g * g)
        p.data -= (state.lr * g / (np.sqrt(v) + state.eps)).astype(p.data.dtype, copy=False)
