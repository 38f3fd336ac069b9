"""Adam and Adadelta with explicit, inspectable state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError


@dataclass
class OptimizerState:
    kind: str
    hyper: dict
    buffers: list = field(default_factory=list)
    step: int = 0


def adam(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState("adam", {"lr": lr, "beta1": beta1, "beta2": beta2, "eps": eps})


def adadelta(lr=1.0, rho=0.95, eps=1e-6):
    return OptimizerState("adadelta", {"lr": lr, "rho": rho, "eps": eps})


def make_optimizer(kind, **hyper):
    if kind == "adam":
        return adam(**hyper)
    if kind == "adadelta":
        return adadelta(**hyper)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(state, params, grads, names=None):
    """Update ``params`` (numpy arrays) in place from ``grads``; advances ``state.step``.

    A ``None`` gradient counts as zero.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise NonFiniteError(f"non-finite gradient for parameter {label}")
    if not state.buffers:
        keys = ("m", "v") if state.kind == "adam" else ("sq_grad", "sq_delta")
        state.buffers = [{k: np.zeros_like(p) for k in keys} for p in params]
    for p, buf in zip(params, state.buffers):
        if buf[next(iter(buf))].shape != p.shape:
            raise ValueError("optimizer buffers do not match parameter shapes")

    state.step += 1
    h = state.hyper
    if state.kind == "adam":
        b1, b2, lr, eps = h["beta1"], h["beta2"], h["lr"], h["eps"]
        c1 = 1.0 - b1 ** state.step
        c2 = 1.0 - b2 ** state.step
        for p, g, buf in zip(params, grads, state.buffers):
            if g is None:
                g = np.zeros_like(p)
            m, v = buf["m"], buf["v"]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    elif state.kind == "adadelta":
        rho, lr, eps = h["rho"], h["lr"], h["eps"]
        for p, g, buf in zip(params, grads, state.buffers):
            if g is None:
                g = np.zeros_like(p)
            sg, sd = buf["sq_grad"], buf["sq_delta"]
            sg *= rho
            sg += (1 - rho) * g * g
            delta = np.sqrt(sd + eps) / np.sqrt(sg + eps) * g
            sd *= rho
            sd += (1 - rho) * delta * delta
            p -= (lr * delta).astype(p.dtype)
    else:
        raise ValueError(f"unknown optimizer {state.kind!r}")
    return state
