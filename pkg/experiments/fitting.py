"""
Convergence-order fitting
Least-squares slopes of log error against log step size, with plateau exclusion
"""

from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

# Minimum error growth exponent between neighboring step sizes
PLATEAU_EXPONENT = 0.2

MIN_POINTS = 3


class ConvergenceFit(BaseModel):
    """log(err) = slope * log(h) + intercept"""

    slope: float
    intercept: float
    h_used: List[float] = Field(default_factory=list)
    dropped: List[float] = Field(default_factory=list, description="Step sizes excluded as plateau")
    residual: float = Field(default=0.0, ge=0.0, description="Root sum of squared log residuals")

    def predict(self, h: float) -> float:
        return float(np.exp(self.intercept) * h ** self.slope)


def _points(records) -> List[Tuple[float, float]]:
    points = []
    for record in records:
        if isinstance(record, tuple):
            points.append((float(record[0]), float(record[1])))
        else:
            points.append((float(record.h), float(record.rel_error)))
    return points


def exclude_plateau(points: Sequence[Tuple[float, float]]) -> Tuple[List[Tuple[float, float]], List[float]]:
    """
    Drop plateau points from the small-h end

    Walking upward from the smallest h, the smaller point of each pair is
    dropped while err_big / err_small < (h_big / h_small)^0.2.
    """
    kept = sorted(points)
    dropped = []
    while len(kept) >= 2:
        (h_small, e_small), (h_big, e_big) = kept[0], kept[1]
        if e_big / e_small >= (h_big / h_small) ** PLATEAU_EXPONENT:
            break
        dropped.append(h_small)
        kept.pop(0)
    return kept, dropped


def fit_order(records, fit_range: Optional[Tuple[float, float]] = None) -> ConvergenceFit:
    """
    Fit the observed convergence order

    Args:
        records: ErrorRecords, or (h, error) pairs
        fit_range: Inclusive (h_min, h_max) to restrict to

    Returns:
        ConvergenceFit over the pre-plateau points

    Raises:
        ValueError: Non-positive errors or fewer than 3 usable points
    """
    points = _points(records)
    if fit_range is not None:
        lo, hi = fit_range
        points = [(h, e) for h, e in points if lo * (1 - 1e-12) <= h <= hi * (1 + 1e-12)]
    if any(h <= 0.0 or e <= 0.0 for h, e in points):
        raise ValueError("step sizes and errors must be positive to fit an order")
    if len(points) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points in range, got {len(points)}")

    kept, dropped = exclude_plateau(points)
    if len(kept) < MIN_POINTS:
        raise ValueError(
            f"only {len(kept)} usable points after plateau exclusion (dropped h={dropped})"
        )
    if dropped:
        logger.info(f"Plateau exclusion dropped h={dropped}")

    log_h = np.log([h for h, _ in kept])
    log_e = np.log([e for _, e in kept])
    slope, intercept = np.polyfit(log_h, log_e, 1)
    residual = float(np.sqrt(np.sum((log_e - (slope * log_h + intercept)) ** 2)))
    return ConvergenceFit(
        slope=float(slope),
        intercept=float(intercept),
        h_used=[h for h, _ in kept],
        dropped=dropped,
        residual=residual,
    )
