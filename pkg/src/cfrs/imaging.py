"""Raster containers, grayscale conversion and ridge-valley binarisation.

Images are plain numpy arrays:

* RGB image      -- ``uint8`` array of shape ``(rows, cols, 3)``
* gray image     -- ``uint8`` array of shape ``(rows, cols)``
* ridge map      -- ``bool`` array of shape ``(rows, cols)``, True = ridge

Ridges are the dark lines of a finger photo, so both thresholding
routines mark a pixel as ridge when it is darker than its reference level.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError, ParameterError

DEFAULT_ROWS = 310
DEFAULT_COLS = 240

# luma weights in thousandths so the weighted sum stays an exact integer
_LUMA_MILLI = np.array([299, 587, 114], dtype=np.int64)


@dataclass(frozen=True)
class ThresholdParams:
    """Adaptive mean threshold settings: odd window size and offset ``C``."""

    window: int = 15
    offset: float = 5

    def __post_init__(self) -> None:
        if int(self.window) != self.window or self.window < 3 or self.window % 2 == 0:
            raise ParameterError(f"window must be an odd integer >= 3, got {self.window}")

    def check_fits(self, shape: tuple[int, int]) -> None:
        if self.window > min(shape):
            raise ParameterError(
                f"window {self.window} larger than image {shape[0]}x{shape[1]}"
            )


def as_rgb(img: np.ndarray) -> np.ndarray:
    """Validate an RGB image; grayscale input is replicated into three channels."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"expected an image of shape (rows, cols, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ParameterError("RGB intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 3:
        return to_grayscale(arr)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"expected a 2-D gray image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ParameterError("gray intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luma ``0.299 R + 0.587 G + 0.114 B``, rounded half away from zero.

    Computed in integer thousandths, so the rounding is exact.
    """
    rgb = as_rgb(img).astype(np.int64)
    weighted = rgb @ _LUMA_MILLI  # non-negative, so floor((v + 500) / 1000) rounds half up
    gray = (weighted + 500) // 1000
    return np.clip(gray, 0, 255).astype(np.uint8)


def _window_sums(gray: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    padded = np.pad(gray.astype(np.int64), half, mode="reflect")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = padded.cumsum(0).cumsum(1)
    rows, cols = gray.shape
    w = window
    return (
        integral[w : w + rows, w : w + cols]
        - integral[:rows, w : w + cols]
        - integral[w : w + rows, :cols]
        + integral[:rows, :cols]
    )


def adaptive_mean_threshold(img: np.ndarray, params: ThresholdParams = ThresholdParams()) -> np.ndarray:
    """Binarise with a local mean: ridge iff ``gray < mean(window) - C``.

    Border windows are completed by mirror reflection about the edge pixel
    (``d c b | a b c d | c b a``). The comparison is carried out on window
    sums so integer offsets are decided exactly.
    """
    gray = as_gray(img)
    params.check_fits(gray.shape)
    n = params.window * params.window
    sums = _window_sums(gray, params.window)
    g = gray.astype(np.int64)
    offset = params.offset
    if isinstance(offset, numbers.Integral) or float(offset).is_integer():
        if abs(offset) > 10**6:
            return np.full(gray.shape, offset < 0, dtype=bool)
        return (g + int(offset)) * n < sums
    return (g + float(offset)) * n < sums.astype(np.float64)


def global_threshold(img: np.ndarray, t: int) -> np.ndarray:
    """Ridge iff ``gray < t`` for a single global level ``t`` in [0, 255]."""
    if not 0 <= t <= 255:
        raise ParameterError(f"global threshold must lie in [0, 255], got {t}")
    return as_gray(img) < t


# ---------------------------------------------------------------------------
# File I/O


def read_image(path: str | Path) -> np.ndarray:
    """Read PNG/PGM/PPM into an RGB ``uint8`` array (gray files are replicated)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "1", "I;16", "I"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    return as_rgb(arr)


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write an RGB or gray ``uint8`` image; format follows the suffix."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = as_rgb(arr)
    else:
        arr = as_gray(arr)
    Image.fromarray(arr).save(Path(path))


def ridge_map_to_gray(ridges: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(ridges, dtype=bool), 0, 255).astype(np.uint8)


def write_ridge_map(path: str | Path, ridges: np.ndarray) -> None:
    """Write a ridge map as PGM: ridge pixels black (0), background white (255)."""
    Image.fromarray(ridge_map_to_gray(ridges)).save(Path(path), format="PPM")


def read_ridge_map(path: str | Path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("L")) < 128
