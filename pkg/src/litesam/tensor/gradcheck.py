"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, precision


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of scalar ``f`` at ``x``.

    The denominator per coordinate is ``max(1, |analytic|, |numeric|)``. Any NaN
    on either side returns ``inf`` so callers see a failure.
    """
    if not 0 < h <= 1e-2:
        raise ValueError("h must lie in (0, 1e-2]")
    return finite_diff_check_many(lambda ts: f(ts[0]), [x], h)


def finite_diff_check_many(f: Callable[[Sequence[Tensor]], Tensor], xs: Sequence[Tensor],
                           h: float = 1e-5) -> float:
    """Same as :func:`finite_diff_check` over several inputs at once."""
    with precision(np.float64):
        return _check_inputs(f, xs, h)


def _check_inputs(f, xs, h):
    leaves = [Tensor(np.array(x.data, dtype=np.float64), requires_grad=True) for x in xs]
    out = f(leaves)
    out.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f([Tensor(l.data) for l in leaves]).item()
            flat[i] = orig - h
            fm = f([Tensor(l.data) for l in leaves]).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(numeric))):
            return float("inf")
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


def module_param_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                       max_coords: int = 40, rng: np.random.Generator = None) -> float:
    """Finite-difference check on a subset of coordinates of module parameters.

    Modules hold their parameters by reference, so coordinates are perturbed in
    place. ``params`` must already be float64.
    """
    rng = rng or np.random.default_rng(0)
    with precision(np.float64):
        return _check_params(loss_fn, params, h, max_coords, rng)


def _check_params(loss_fn, params, h, max_coords, rng):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            an = analytic[i]
            if not (np.isfinite(num) and np.isfinite(an)):
                return float("inf")
            worst = max(worst, abs(an - num) / max(1.0, abs(an), abs(num)))
    return worst
