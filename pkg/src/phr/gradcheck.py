"""Central finite-difference verification of the analytic gradients.

Loss surfaces are probed in float64: coordinate probes perturb a random
subset of entries per parameter, and directional probes compare one
projected derivative against the whole gradient at once (cheap enough for
full models). `run_suite` walks every layer type plus both losses and the
end-to-end cascade and reports the worst relative error per check.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def _analytic_grads(fn, params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
    with Tape():
        out = fn()
        backward(out)


def check_coordinates(fn, params: dict[str, Tensor], rng: np.random.Generator,
                      probes: int = 8, h: float = DEFAULT_H) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients
    on `probes` random coordinates of each parameter.

    `fn` must rebuild the forward pass from the current parameter values
    and return a scalar Tensor.
    """
    _analytic_grads(fn, params)
    errs: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = min(probes, flat.size)
        idxs = rng.choice(flat.size, size=n, replace=False)
        gflat = p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, rel_err(float(gflat[i]), numeric))
        errs[name] = worst
    return errs


def check_directional(fn, params: dict[str, Tensor], rng: np.random.Generator,
                      directions: int = 3, h: float = DEFAULT_H) -> float:
    """Max relative error of d^T grad vs the derivative along d for a few
    random unit directions spanning all parameters at once."""
    _analytic_grads(fn, params)
    names = sorted(params)
    worst = 0.0
    for _ in range(directions):
        ds = {}
        norm_sq = 0.0
        for name in names:
            d = rng.standard_normal(params[name].data.shape)
            ds[name] = d
            norm_sq += float((d * d).sum())
        scale = 1.0 / np.sqrt(norm_sq)
        analytic = 0.0
        for name in names:
            p = params[name]
            ds[name] *= scale
            if p.grad is not None:
                analytic += float((p.grad * ds[name]).sum())
        for name in names:
            params[name].data += h * ds[name]
        f_plus = fn().item()
        for name in names:
            params[name].data -= 2.0 * h * ds[name]
        f_minus = fn().item()
        for name in names:
            params[name].data += h * ds[name]
        numeric = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def uniform(rng: np.random.Generator, shape, lo=-2.0, hi=2.0, dtype=np.float64) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape).astype(dtype)
