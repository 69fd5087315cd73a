"""Minutiae extraction pipeline: luma, adaptive threshold, thinning, crossing number."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import ThresholdParams, adaptive_mean_threshold, as_gray
from .minutiae import MinutiaeSet, extract_minutiae
from .ridges import COHERENCE_THRESHOLD, OrientationField, estimate_orientation, thin


@dataclass(frozen=True)
class ExtractionParams:
    threshold: ThresholdParams = field(default_factory=ThresholdParams)
    block_size: int = 16
    border_margin: int = 10
    merge_radius: float = 5.0
    coherence: float = COHERENCE_THRESHOLD


@dataclass(frozen=True)
class Stages:
    gray: np.ndarray
    ridges: np.ndarray
    skeleton: np.ndarray
    field: OrientationField
    minutiae: MinutiaeSet


def run_stages(img: np.ndarray, params: ExtractionParams = ExtractionParams()) -> Stages:
    """Every intermediate product for one photo (RGB or gray)."""
    gray = as_gray(img)
    ridges = adaptive_mean_threshold(gray, params.threshold)
    skeleton = thin(ridges)
    of = estimate_orientation(gray, params.block_size)
    ms = extract_minutiae(skeleton, of, params.border_margin, params.merge_radius, params.coherence)
    return Stages(gray, ridges, skeleton, of, ms)


def extract_features(img: np.ndarray, params: ExtractionParams = ExtractionParams()) -> MinutiaeSet:
    return run_stages(img, params).minutiae
