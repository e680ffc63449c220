"""Mean absolute error loss with its subgradient."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Return (mean |pred - target|, gradient w.r.t. pred).

    The gradient is sign(pred - target) / N with sign(0) = 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValidationError(
            f"pred shape {pred.shape} != target shape {target.shape}"
        )
    if pred.size == 0:
        raise ValidationError("mae_loss on an empty batch")
    diff = pred - target
    loss = float(np.mean(np.abs(diff), dtype=np.float64))
    grad = np.sign(diff) / diff.size
    return loss, grad.astype(pred.dtype)
