"""Adam for Euclidean parameters and Riemannian Adam for ball-valued ones."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .autodiff import Parameter


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def _moments(self, shape):
        if self.m is None:
            self.m = np.zeros(shape)
            self.v = np.zeros(shape)
        if self.m.shape != shape:
            raise ValueError(f"moment shape {self.m.shape} does not match parameter {shape}")


def _checked_grad(p: Parameter) -> np.ndarray:
    g = np.zeros_like(p.value) if p.grad is None else p.grad
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient for {p.name or 'parameter'}")
    return g


def _adam_direction(g: np.ndarray, state: OptimizerState) -> np.ndarray:
    b1, b2 = state.betas
    state._moments(g.shape)
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def euclidean_adam_step(p: Parameter, state: OptimizerState) -> Parameter:
    if p.space != Parameter.EUCLIDEAN:
        raise ValueError(f"{p.name or 'parameter'} is not Euclidean")
    g = _checked_grad(p)
    if state.weight_decay:
        g = g + state.weight_decay * p.value
    p.value = p.value + _adam_direction(g, state)
    return p


def riemannian_adam_step(p: Parameter, state: OptimizerState,
                         cfg: geo.GeometryConfig = geo.DEFAULT) -> Parameter:
    """Adam on the Riemannian gradient, retracted with the exponential map.

    Moments are plain vectors carried between tangent spaces without
    parallel transport.  Rows of a 2-D parameter are independent points.
    """
    if p.space != Parameter.HYPERBOLIC:
        raise ValueError(f"{p.name or 'parameter'} is not hyperbolic")
    g = _checked_grad(p)
    rgrad = g * geo.riemannian_scale(p.value)
    step = _adam_direction(rgrad, state)
    p.value = np.asarray(geo.project_to_ball(geo.exp_map(p.value, step, cfg), cfg))
    return p


@dataclass
class Optimizer:
    """Routes each parameter to the optimizer matching its space."""

    params: list[Parameter]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    cfg: geo.GeometryConfig = geo.DEFAULT
    states: list[OptimizerState] = field(init=False)

    def __post_init__(self):
        self.states = [
            OptimizerState(lr=self.lr, betas=self.betas, eps=self.eps,
                           weight_decay=self.weight_decay if p.space == Parameter.EUCLIDEAN else 0.0)
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, st in zip(self.params, self.states):
            if p.space == Parameter.EUCLIDEAN:
                euclidean_adam_step(p, st)
            else:
                riemannian_adam_step(p, st, self.cfg)
