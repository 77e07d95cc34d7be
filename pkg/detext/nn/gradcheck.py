"""Central finite-difference check of analytic gradients."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from detext.nn.tensor import ParameterTensor, Tensor, backward, no_grad, zero_grads

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Max relative error per tensor name."""
    per_tensor: dict[str, float] = field(default_factory=dict)
    coordinates_checked: int = 0
    coordinates_refined: int = 0

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    def worst(self) -> Optional[str]:
        if not self.per_tensor:
            return None
        return max(self.per_tensor, key=self.per_tensor.get)


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[ParameterTensor],
    eps: float = 1e-3,
    max_coords_per_tensor: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-2,
    tolerance: float = 1e-4,
    refine: float = 1e-3,
) -> GradCheckReport:
    """
    Compare backward() gradients with (f(x+eps) - f(x-eps)) / 2eps.

    Large tensors may be sampled down to max_coords_per_tensor coordinates.
    Relative error uses max(|analytic|, |numeric|, floor) as denominator so
    near-zero gradients are judged on absolute error. Run in float64 for a
    tight check.

    relu and max-pooling are only piecewise smooth: a step of eps can cross
    a kink. A coordinate whose error exceeds ``tolerance`` is measured again
    with step eps * refine and keeps the smaller error; such coordinates are
    counted in ``coordinates_refined``.
    """
    trainable = [p for p in params if p.trainable]
    zero_grads(trainable)
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in trainable}
    zero_grads(trainable)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    with no_grad():
        for p in trainable:
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
                coords = np.sort(rng.choice(flat.size, size=max_coords_per_tensor, replace=False))
            worst = 0.0
            for i in coords:
                grad = float(analytic[p.name].reshape(-1)[i])
                error = relative_error(grad, _central_difference(loss_fn, flat, i, eps), floor)
                if error > tolerance and refine:
                    fine = relative_error(grad, _central_difference(loss_fn, flat, i, eps * refine), floor)
                    error = min(error, fine)
                    report.coordinates_refined += 1
                worst = max(worst, error)
            report.per_tensor[p.name] = worst
            report.coordinates_checked += len(coords)
    logger.debug(f"Gradient check: max relative error {report.max_error:.3e} at {report.worst()}")
    return report


def _central_difference(loss_fn: Callable[[], Tensor], flat: np.ndarray, i: int, eps: float) -> float:
    original = flat[i]
    flat[i] = original + eps
    plus = loss_fn().item()
    flat[i] = original - eps
    minus = loss_fn().item()
    flat[i] = original
    return (plus - minus) / (2 * eps)
