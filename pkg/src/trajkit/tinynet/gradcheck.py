"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .network import cross_entropy

MAX_CHECKED = 10_000
DENOM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOM_FLOOR) -> np.ndarray:
    """Elementwise |a - n| / max(|a| + |n|, floor)."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5,
                     indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to entries of ``array`` (perturbed in place)."""
    flat = array.reshape(-1)
    grad = np.zeros(flat.shape)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(array.shape)


def _loss_fn(model, x, target) -> Callable[[], float]:
    target = np.asarray(target)
    if target.dtype.kind in "iu":
        return lambda: cross_entropy(model.forward(x), target)[0]
    return lambda: float((model.forward(x) * target).sum())


def _analytic(model, x, target) -> None:
    for p in model.parameters():
        p.grad[...] = 0.0
    out = model.forward(x)
    target = np.asarray(target)
    if target.dtype.kind in "iu":
        _, dout = cross_entropy(out, target)
    else:
        dout = target
    model.backward(dout)


def gradient_check(model, x, target, h: float = 1e-5, seed: int = 0,
                   max_checked: int = MAX_CHECKED) -> float:
    """Largest relative error between analytic and central-difference parameter gradients.

    ``target`` holds integer class labels (cross-entropy on the model output) or
    a float array with the output's shape, used as the upstream gradient of the
    linear probe loss ``sum(output * target)``. Above ``max_checked`` parameters
    a random subsample is compared. Returns 0.0 for parameter-free models.
    """
    params = model.parameters()
    if not params:
        return 0.0
    _analytic(model, x, target)
    analytic = [p.grad.copy() for p in params]
    f = _loss_fn(model, x, target)
    total = sum(p.value.size for p in params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        idx = None
        if total > max_checked:
            share = max(1, int(max_checked * p.value.size / total))
            idx = rng.choice(p.value.size, size=min(share, p.value.size), replace=False)
        num = numeric_gradient(f, p.value, h, idx)
        if idx is None:
            err = relative_error(a, num)
        else:
            err = relative_error(a.reshape(-1)[idx], num.reshape(-1)[idx])
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
