"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, index, h: float = 1e-3) -> float:
    """(f(x + h) - f(x - h)) / 2h at one coordinate of ``param``."""
    old = param.data[index].copy()
    param.data[index] = old + h
    up = float(loss_fn().data)
    param.data[index] = old - h
    down = float(loss_fn().data)
    param.data[index] = old
    return (up - down) / (2 * h)


# absolute floor for the relative error; gradients below it count as zero
GRAD_FLOOR = 1e-10


def resolution(loss: float, h: float, dtype=np.float64) -> float:
    """Smallest gradient a central difference measures to well under 1%.

    A deep loss carries a few ulp of accumulated roundoff, so f(x+h) - f(x-h)
    is trusted once it spans about a thousand ulp of the loss."""
    return 1000 * float(np.finfo(dtype).eps) * max(abs(loss), 1.0) / (2 * h)


@dataclass
class Probe:
    name: str
    index: tuple
    analytic: float
    numeric: float
    floor: float = GRAD_FLOOR

    @property
    def rel_error(self) -> float:
        """|a - n| / max(|a|, |n|, floor); values below the floor are compared
        on an absolute scale."""
        scale = max(abs(self.analytic), abs(self.numeric), self.floor, GRAD_FLOOR)
        return abs(self.analytic - self.numeric) / scale


def probe_gradients(loss_fn: Callable[[], Tensor], named_params, n_probes: int,
                    rng: np.random.Generator, h: float = 1e-5) -> list[Probe]:
    """Compare analytic and numeric gradients on random coordinates.

    Every parameter that received a gradient above ``GRAD_FLOOR`` is probed
    once at such a coordinate.  Further probes, up to ``n_probes``, pick a
    uniformly random coordinate of a random parameter, so missing gradients
    (analytic zero, numeric non-zero) are caught too.  Each probe's floor is
    the finite-difference ``resolution`` at the current loss.
    """
    params = dict(named_params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    floor = resolution(float(loss.data), h, loss.data.dtype)
    touched = [k for k, p in params.items()
               if p.grad is not None and np.any(np.abs(p.grad) > GRAD_FLOOR)]
    if not touched:
        raise RuntimeError("no parameter received a gradient")
    names = list(params)
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
             for k, p in params.items()}
    picks = []
    for name in touched:
        nz = np.argwhere(np.abs(grads[name]) > GRAD_FLOOR)
        picks.append((name, tuple(int(i) for i in nz[int(rng.integers(len(nz)))])))
    while len(picks) < n_probes:
        name = names[int(rng.integers(len(names)))]
        flat = int(rng.integers(params[name].data.size))
        picks.append((name, tuple(int(i) for i in np.unravel_index(flat, params[name].shape))))
    probes = []
    for name, index in picks:
        num = numeric_grad(loss_fn, params[name], index, h)
        probes.append(Probe(name, index, float(grads[name][index]), num, floor))
    return probes
