"""SGD with momentum and weight decay.

Update form: v <- mu*v - lr*(g + wd*theta); theta <- theta + v.
With mu = 0 and wd = 0 this reduces exactly to theta - lr*g.
"""

from __future__ import annotations

from .layers import Parameter


class SGD:
    def __init__(self, params: list[Parameter], momentum: float = 0.9,
                 weight_decay: float = 0.00005):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [p.data * 0 for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v -= lr * (p.grad + self.weight_decay * p.data)
            p.data += v
