"""Shared test helpers."""

from __future__ import annotations

import numpy as np

from artiqn import quantile_net as qn


def random_params(rng: np.random.Generator, cfg: qn.NetConfig, scale: float = 0.4) -> qn.NetParams:
    """Fully random parameters, biases included.

    Finite-difference checks need continuous-random biases: zero-init
    biases put ReLU pre-activations exactly on the kink, where numeric and
    subgradient answers legitimately disagree.
    """
    return qn.NetParams.from_list(
        [rng.normal(0.0, scale, size=shape) for shape in qn.NetParams.shapes(cfg)])


def fd_gradient(loss_of, params: qn.NetParams, h: float = 1e-6) -> qn.NetParams:
    """Central finite-difference gradient of a scalar loss over every coordinate."""
    grads = []
    for arr in params.as_list():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss_of(params)
            arr[idx] = orig - h
            lm = loss_of(params)
            arr[idx] = orig
            g[idx] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return qn.NetParams.from_list(grads)


def max_rel_error(analytic: qn.NetParams, numeric: qn.NetParams, floor: float = 1e-3) -> float:
    """Largest per-coordinate relative error, floored so that true-zero
    gradients compare at an absolute tolerance of floor * rtol."""
    worst = 0.0
    for ga, gf in zip(analytic.as_list(), numeric.as_list()):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gf)), floor)
        worst = max(worst, float(np.max(np.abs(ga - gf) / denom)))
    return worst


def scripted_params(cfg: qn.NetConfig, preferred_action: int, bonus: float = 1.0) -> qn.NetParams:
    """Zero network except an output bias favoring one action, yielding a
    constant policy regardless of observation or tau."""
    p = qn.NetParams.zeros(cfg)
    p.b_out[preferred_action] = bonus
    return p
