"""Heavy-ball SGD and the stepped learning-rate schedule.

The update is v <- mu*v + g; w <- w - eta*v (no Nesterov, no weight
decay, no dampening). The schedule holds the initial rate for a fixed
number of epochs and then halves it every other epoch: with the
defaults, epochs 1-8 run at 1e-2, 9-10 at 5e-3, 11-12 at 2.5e-3, and in
general eta0 * 2^(-ceil((e - 8) / 2)) for e > 8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 1e-2
    constant_epochs: int = 8
    halving_period: int = 2


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    if epoch <= schedule.constant_epochs:
        return schedule.initial
    halvings = math.ceil((epoch - schedule.constant_epochs) / schedule.halving_period)
    return schedule.initial * 2.0 ** (-halvings)


def sgd_update(data: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
               lr: float, momentum: float) -> None:
    """One in-place heavy-ball step on a single parameter buffer."""
    velocity *= momentum
    velocity += grad
    data -= lr * velocity


@dataclass
class SgdMomentum:
    """Velocity buffers plus the current rate and epoch counter."""

    params: list[Tensor]
    lr: float = 1e-2
    momentum: float = 0.9
    epoch: int = 1
    velocities: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                continue
            sgd_update(p.data, p.grad, v, self.lr, self.momentum)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def set_epoch(self, epoch: int, schedule: LrSchedule) -> None:
        self.epoch = epoch
        self.lr = lr_at_epoch(schedule, epoch)
