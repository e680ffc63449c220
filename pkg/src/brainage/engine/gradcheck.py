"""Central finite-difference validation of analytic gradients.

Runs a fragment of layers followed by the MAE loss in 64-bit mode and
compares every parameter gradient (and optionally the input gradient)
against (f(theta+h) - f(theta-h)) / 2h with h = step * (|theta| + 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .layers import Sequential
from .loss import mae_loss


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[tuple[str, float]] = field(default_factory=list)

    @property
    def max_relative_error(self) -> float:
        return max((err for _, err in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def failures(self) -> list[tuple[str, float]]:
        return [(name, err) for name, err in self.entries if err >= self.tolerance]


def _relative_error(analytic: float, numeric: float, atol: float) -> float:
    # differences below the central-difference noise floor (~1e-11 for
    # O(1) losses at step 1e-5) are unmeasurable, not wrong: a genuinely
    # zero gradient probes as pure roundoff otherwise
    if abs(analytic - numeric) <= atol:
        return 0.0
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def gradcheck(
    fragment,
    x: np.ndarray,
    target: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    check_input: bool = True,
    atol: float = 1e-10,
) -> GradCheckReport:
    """Check analytic gradients of mae_loss(fragment(x), target).

    The fragment is a Sequential or a list of layers built with
    dtype=np.float64; x and target must be float64 as well. ReLU and
    max-pool ties at the probe points would invalidate the comparison, so
    inputs should be generic (random) values.
    """
    seq = fragment if isinstance(fragment, Sequential) else Sequential(list(fragment))
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise ValidationError("gradcheck requires float64 input")

    def objective() -> float:
        return mae_loss(seq.forward(x, training=True), target)[0]

    # analytic pass
    for p in seq.parameters():
        p.zero_grad()
    pred = seq.forward(x, training=True)
    _, dpred = mae_loss(pred, target)
    dx = seq.backward(dpred)

    report = GradCheckReport(tolerance=tolerance)
    for name, p in seq.named_parameters():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            h = step * (abs(orig) + 1.0)
            flat[j] = orig + h
            f_plus = objective()
            flat[j] = orig - h
            f_minus = objective()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _relative_error(grad[j], numeric, atol))
        report.entries.append((name, worst))

    if check_input:
        flat = x.reshape(-1)
        dflat = dx.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            h = step * (abs(orig) + 1.0)
            flat[j] = orig + h
            f_plus = objective()
            flat[j] = orig - h
            f_minus = objective()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _relative_error(dflat[j], numeric, atol))
        report.entries.append(("input", worst))

    return report
