"""Min-max score normalisation and weighted-sum fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .errors import CalibrationError, ParameterError


@dataclass(frozen=True)
class ScoreCalibration:
    min_d: float
    max_d: float
    min_m: float
    max_m: float

    def __post_init__(self):
        if not (self.min_d < self.max_d and self.min_m < self.max_m):
            raise CalibrationError(f"degenerate calibration bounds {self}")


@dataclass(frozen=True)
class FusionWeights:
    w_d: float = 0.4
    w_m: float = 0.6

    def __post_init__(self):
        if self.w_d < 0 or self.w_m < 0 or not math.isclose(self.w_d + self.w_m, 1.0, abs_tol=1e-12):
            raise ParameterError(f"fusion weights must be >= 0 and sum to 1, got {self}")


def _bounds(scores: Iterable[float], branch: str) -> tuple[float, float]:
    vals = [float(s) for s in scores]
    if not vals:
        raise CalibrationError(f"no {branch} scores to calibrate on")
    lo, hi = min(vals), max(vals)
    if not lo < hi:
        raise CalibrationError(f"all {branch} scores equal {lo}; cannot normalise")
    return lo, hi


def calibrate(embedding_scores: Iterable[float], minutiae_scores: Iterable[float]) -> ScoreCalibration:
    """Observed extremes of each branch's raw scores."""
    lo_d, hi_d = _bounds(embedding_scores, "embedding")
    lo_m, hi_m = _bounds(minutiae_scores, "minutiae")
    return ScoreCalibration(lo_d, hi_d, lo_m, hi_m)


def normalize(score: float, lo: float, hi: float) -> float:
    """``(score - lo) / (hi - lo)`` clamped to [0, 1]."""
    if not lo < hi:
        raise ParameterError(f"normalize needs lo < hi, got ({lo}, {hi})")
    return min(1.0, max(0.0, (score - lo) / (hi - lo)))


def fuse(sd_norm: float, sm_norm: float, w: FusionWeights = FusionWeights()) -> float:
    """S_f = w_d * Sd_norm + w_m * Sm_norm."""
    return w.w_d * sd_norm + w.w_m * sm_norm


def fused_score(sd: float, sm: float, cal: ScoreCalibration,
                w: FusionWeights = FusionWeights()) -> tuple[float, float, float]:
    """Normalised branch scores and their fusion for raw ``(S_d, S_m)``."""
    dn = normalize(sd, cal.min_d, cal.max_d)
    mn = normalize(sm, cal.min_m, cal.max_m)
    return dn, mn, fuse(dn, mn, w)
