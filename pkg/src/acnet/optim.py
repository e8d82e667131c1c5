"""Adam with bias correction and the step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError


@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halving_period: int = 400_000
    total_steps: int = 660_000
    batch: int = 16


def lr_schedule(step: int, lr0: float = 1e-4, halving_period: int = 400_000) -> float:
    """``lr0`` halved once per completed ``halving_period`` steps."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return lr0 * 0.5 ** (step // halving_period)


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    rng_seed: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray], hyper: HyperParams | None = None, seed: int = 0):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            hyper=hyper or HyperParams(),
            rng_seed=seed,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: TrainState,
    lr: float | None = None,
) -> None:
    """One in-place Adam update of ``params``; advances ``state.step``.

    ``lr`` defaults to the schedule value at the current step.
    """
    h = state.hyper
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: grad shape {g.shape} != param shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    if lr is None:
        lr = lr_schedule(state.step, h.lr, h.halving_period)
    t = state.step + 1
    c1 = 1.0 - h.beta1**t
    c2 = 1.0 - h.beta2**t
    for name, g in grads.items():
        p = params[name]
        m, v = state.m[name], state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + h.eps)
        p -= (lr * update).astype(p.dtype, copy=False)
    state.step = t
