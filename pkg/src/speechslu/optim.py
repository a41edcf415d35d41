"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import FrozenParameter, MissingGradient


@dataclass
class AdamWState:
    """Optimizer state; moment buffers are keyed by parameter identity."""

    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adamw_step(params: list[Tensor], state: AdamWState) -> None:
    """One AdamW update over `params`; clears gradients afterwards.

    Every parameter must be trainable and carry a gradient. Weight decay
    is decoupled (applied to the weights directly, not through the
    moment estimates).
    """
    frozen = [p.name or "<unnamed>" for p in params if not p.trainable]
    if frozen:
        raise FrozenParameter(f"frozen parameters passed to optimizer: {', '.join(frozen)}")
    missing = [p.name or "<unnamed>" for p in params if p.grad is None]
    if missing:
        raise MissingGradient(missing)

    state.t += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p in params:
        key = id(p)
        g = p.grad
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                              + state.weight_decay * p.data)
        p.grad = None


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
