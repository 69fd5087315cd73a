"""Block orientation field and connectivity-preserving skeletonisation.

Angles use the usual fingerprint convention: x to the right, y *up*
(so counter-clockwise on screen), ridge orientation in ``[0, pi)``.
Row indices grow downward, hence the sign flip on the row gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .imaging import as_gray, write_ridge_map

COHERENCE_THRESHOLD = 0.3


@dataclass(frozen=True)
class OrientationField:
    block_size: int
    angles: np.ndarray      # (block_rows, block_cols), radians in [0, pi)
    coherence: np.ndarray   # (block_rows, block_cols), in [0, 1]
    shape: tuple[int, int]  # pixel dimensions of the source image

    @property
    def block_rows(self) -> int:
        return self.angles.shape[0]

    @property
    def block_cols(self) -> int:
        return self.angles.shape[1]

    def block_of(self, row: int, col: int) -> tuple[int, int]:
        return row // self.block_size, col // self.block_size

    def angle_at(self, row: int, col: int) -> float:
        return float(self.angles[self.block_of(row, col)])

    def coherence_at(self, row: int, col: int) -> float:
        return float(self.coherence[self.block_of(row, col)])

    @classmethod
    def uniform(cls, shape: tuple[int, int], angle: float, coherence: float = 1.0,
                block_size: int = 16) -> "OrientationField":
        """Constant field, handy for tests and synthetic skeletons."""
        br = -(-shape[0] // block_size)
        bc = -(-shape[1] // block_size)
        return cls(
            block_size,
            np.full((br, bc), angle % math.pi),
            np.full((br, bc), float(coherence)),
            tuple(shape),
        )

    def to_text(self) -> str:
        """Debug dump: one line per block row, angles in whole degrees."""
        lines = []
        for row in np.degrees(self.angles):
            lines.append(" ".join(f"{v:6.1f}" for v in row))
        return "\n".join(lines) + "\n"


def estimate_orientation(img: np.ndarray, block_size: int = 16) -> OrientationField:
    """Least-squares ridge orientation per block from central-difference gradients.

    The dominant gradient direction ``phi = atan2(sum 2 gx gy, sum gx^2 - gy^2) / 2``
    is perpendicular to the ridges, so the ridge angle is ``phi + pi/2`` mod pi.
    Coherence is ``|sum of doubled-angle vectors| / sum |g|^2``; 0 for flat blocks.
    """
    if block_size < 4:
        raise ParameterError(f"block size must be >= 4, got {block_size}")
    gray = as_gray(img).astype(np.float64)
    if gray.shape[0] < block_size or gray.shape[1] < block_size:
        raise ParameterError(
            f"image {gray.shape[0]}x{gray.shape[1]} smaller than one {block_size}px block"
        )
    gy_down, gx = np.gradient(gray)
    gy = -gy_down

    starts_r = np.arange(0, gray.shape[0], block_size)
    starts_c = np.arange(0, gray.shape[1], block_size)

    def block_sum(a: np.ndarray) -> np.ndarray:
        return np.add.reduceat(np.add.reduceat(a, starts_r, axis=0), starts_c, axis=1)

    sxx = block_sum(gx * gx)
    syy = block_sum(gy * gy)
    sxy = block_sum(gx * gy)

    a = sxx - syy
    b = 2.0 * sxy
    phi = 0.5 * np.arctan2(b, a)
    angles = np.mod(phi + math.pi / 2, math.pi)
    angles[angles >= math.pi] = 0.0  # float rounding of mod
    energy = sxx + syy
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(energy > 1e-12, np.hypot(a, b) / energy, 0.0)
    coherence = np.clip(coherence, 0.0, 1.0)
    return OrientationField(block_size, angles, coherence, gray.shape)


# ---------------------------------------------------------------------------
# Thinning


def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    """x1..x8 counter-clockwise from east: E, NE, N, NW, W, SW, S, SE."""
    p = np.pad(img, 1)
    r, c = img.shape
    shifts = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]
    return [p[1 + dr : 1 + dr + r, 1 + dc : 1 + dc + c] for dr, dc in shifts]


def _connectivity_number(nb: list[np.ndarray]) -> np.ndarray:
    # Yokoi 8-connectivity number on the complement; 1 <=> pixel is simple
    q = [1 - x.astype(np.int8) for x in nb]
    total = np.zeros(nb[0].shape, dtype=np.int8)
    for k in (0, 2, 4, 6):
        total += q[k] - q[k] * q[(k + 1) % 8] * q[(k + 2) % 8]
    return total


def _deletable(img: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    nb = _neighbours(img)
    count = sum(x.astype(np.int8) for x in nb)
    ok = img & (count >= 2) & (_connectivity_number(nb) == 1)
    return nb, ok


def _is_simple_at(img: np.ndarray, r: int, c: int) -> bool:
    win = np.pad(img, 1)[r : r + 3, c : c + 3]
    nb = [win[1, 2], win[0, 2], win[0, 1], win[0, 0], win[1, 0], win[2, 0], win[2, 1], win[2, 2]]
    if sum(bool(x) for x in nb) < 2:
        return False
    q = [0 if x else 1 for x in nb]
    n8 = sum(q[k] - q[k] * q[(k + 1) % 8] * q[(k + 2) % 8] for k in (0, 2, 4, 6))
    return n8 == 1


def _break_blocks(img: np.ndarray) -> bool:
    """Delete one simple pixel from each remaining fully-set 2x2 block."""
    changed = False
    blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
    for r, c in zip(*np.nonzero(blocks)):
        if not (img[r, c] and img[r + 1, c] and img[r, c + 1] and img[r + 1, c + 1]):
            continue
        for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
            if _is_simple_at(img, r + dr, c + dc):
                img[r + dr, c + dc] = False
                changed = True
                break
    return changed


def thin(ridges: np.ndarray) -> np.ndarray:
    """Reduce a ridge map to a one-pixel-wide skeleton.

    Four directional sub-iterations (N, S, E, W) per pass delete border
    pixels that are 8-simple and not line ends; this preserves the
    8-connected components. A cleanup step then removes a simple pixel from
    any 2x2 block still present. Iterates to a fixpoint, so
    ``thin(thin(x)) == thin(x)``.
    """
    img = np.array(ridges, dtype=bool, copy=True)
    if img.ndim != 2:
        raise ParameterError(f"ridge map must be 2-D, got shape {img.shape}")
    # direction index into the neighbour list: N=2, S=6, E=0, W=4
    directions = (2, 6, 0, 4)
    while True:
        changed = False
        for d in directions:
            nb, ok = _deletable(img)
            kill = ok & ~nb[d]
            if kill.any():
                img[kill] = False
                changed = True
        if not changed:
            if not _break_blocks(img):
                return img


def write_skeleton(path: str | Path, skeleton: np.ndarray) -> None:
    write_ridge_map(path, skeleton)


def write_orientation_text(path: str | Path, field: OrientationField) -> None:
    Path(path).write_text(field.to_text())
