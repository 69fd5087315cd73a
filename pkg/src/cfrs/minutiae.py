"""Crossing-number minutiae detection on a ridge skeleton.

A minutia is a ridge termination (crossing number 1) or bifurcation
(crossing number 3), stored as ``(x, y, theta)`` plus kind and quality.
``theta`` is in degrees, counter-clockwise with y pointing up, in ``[0, 360)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import IngestionError, ParameterError
from .ridges import COHERENCE_THRESHOLD, OrientationField

TERMINATION = "termination"
BIFURCATION = "bifurcation"
KINDS = (TERMINATION, BIFURCATION)

# neighbour offsets (drow, dcol), counter-clockwise from east
RING = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))

TRACE_LENGTH = 10


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    theta: float
    kind: str
    quality: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown minutia kind {self.kind!r}")
        if not 0.0 <= self.theta < 360.0:
            raise ParameterError(f"theta must lie in [0, 360), got {self.theta}")
        if not 0.0 <= self.quality <= 1.0:
            raise ParameterError(f"quality must lie in [0, 1], got {self.quality}")


@dataclass(frozen=True)
class MinutiaeSet:
    """Minutiae of one image, kept sorted by ``(y, x)``."""

    rows: int
    cols: int
    minutiae: tuple[Minutia, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        items = tuple(sorted(self.minutiae, key=lambda m: (m.y, m.x)))
        seen = set()
        for m in items:
            if not (0 <= m.x < self.cols and 0 <= m.y < self.rows):
                raise ParameterError(f"minutia at ({m.x}, {m.y}) outside {self.rows}x{self.cols}")
            if (m.x, m.y) in seen:
                raise ParameterError(f"duplicate minutia position ({m.x}, {m.y})")
            seen.add((m.x, m.y))
        object.__setattr__(self, "minutiae", items)

    def __len__(self) -> int:
        return len(self.minutiae)

    def __iter__(self) -> Iterator[Minutia]:
        return iter(self.minutiae)

    def __getitem__(self, i: int) -> Minutia:
        return self.minutiae[i]

    def xy(self) -> np.ndarray:
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64).reshape(-1, 2)

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)

    def count(self, kind: str) -> int:
        return sum(m.kind == kind for m in self.minutiae)

    # -- text format --------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"MINUTIAE v1 {self.rows} {self.cols} {len(self)}"]
        for m in self.minutiae:
            lines.append(
                f"{_num(m.x)} {_num(m.y)} {_num(m.theta)} {m.kind} {_num(m.quality)}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MinutiaeSet":
        lines = text.splitlines()
        if not lines:
            raise IngestionError("empty minutiae text")
        head = lines[0].split()
        if len(head) != 5 or head[:2] != ["MINUTIAE", "v1"]:
            raise IngestionError(f"bad minutiae header: {lines[0]!r}")
        rows, cols, count = int(head[2]), int(head[3]), int(head[4])
        body = [ln for ln in lines[1 : 1 + count]]
        if len(body) != count:
            raise IngestionError(f"expected {count} minutiae, found {len(body)}")
        items = []
        for ln in body:
            parts = ln.split()
            if len(parts) != 5:
                raise IngestionError(f"bad minutia line: {ln!r}")
            x, y, theta, kind, quality = parts
            items.append(Minutia(_parse(x), _parse(y), _parse(theta), kind, _parse(quality)))
        return cls(rows, cols, tuple(items))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path: str | Path) -> "MinutiaeSet":
        return cls.from_text(Path(path).read_text())


def _num(v: float) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(tok: str) -> float:
    try:
        return int(tok)
    except ValueError:
        return float(tok)


# ---------------------------------------------------------------------------
# Detection


def crossing_number(neighborhood: np.ndarray) -> int:
    """Half the number of value changes walking once around the 8-neighbourhood."""
    nb = np.asarray(neighborhood, dtype=bool)
    if nb.shape != (3, 3):
        raise ParameterError(f"neighbourhood must be 3x3, got {nb.shape}")
    if not nb[1, 1]:
        raise ParameterError("crossing number is defined for ridge pixels only")
    ring = [int(nb[1 + dr, 1 + dc]) for dr, dc in RING]
    return sum(abs(ring[i] - ring[(i + 1) % 8]) for i in range(8)) // 2


def crossing_number_map(skeleton: np.ndarray) -> np.ndarray:
    """Crossing number of every skeleton pixel (0 off the skeleton)."""
    sk = np.asarray(skeleton, dtype=bool)
    p = np.pad(sk, 1).astype(np.int8)
    r, c = sk.shape
    ring = [p[1 + dr : 1 + dr + r, 1 + dc : 1 + dc + c] for dr, dc in RING]
    cn = sum(np.abs(ring[i] - ring[(i + 1) % 8]) for i in range(8)) // 2
    return np.where(sk, cn, 0)


def _on(sk: np.ndarray, r: int, c: int) -> bool:
    return 0 <= r < sk.shape[0] and 0 <= c < sk.shape[1] and bool(sk[r, c])


def _branches(sk: np.ndarray, r: int, c: int) -> list[list[tuple[int, int]]]:
    """Runs of consecutive set pixels around (r, c), in ring order."""
    ring = [_on(sk, r + dr, c + dc) for dr, dc in RING]
    if all(ring):
        return [[(r + dr, c + dc) for dr, dc in RING]]
    runs = []
    for i in range(8):
        if ring[i] and not ring[i - 1]:
            run = []
            j = i
            while ring[j % 8] and len(run) < 8:
                dr, dc = RING[j % 8]
                run.append((r + dr, c + dc))
                j += 1
            runs.append(run)
    return runs


def _branch_centroid(sk: np.ndarray, origin: tuple[int, int], run: list[tuple[int, int]],
                     blocked: set[tuple[int, int]], length: int = TRACE_LENGTH
                     ) -> tuple[float, float]:
    """Centroid of skeleton pixels reachable from ``run`` within ``length`` steps."""
    seen = set(blocked) | {origin} | set(run)
    frontier = list(run)
    reached = list(run)
    for _ in range(length - 1):
        nxt = []
        for pr, pc in frontier:
            for dr, dc in RING:
                q = (pr + dr, pc + dc)
                if q not in seen and _on(sk, *q):
                    seen.add(q)
                    nxt.append(q)
        if not nxt:
            break
        reached.extend(nxt)
        frontier = nxt
    arr = np.array(reached, dtype=np.float64)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def _direction_deg(origin: tuple[int, int], target: tuple[float, float]) -> float | None:
    dx = target[1] - origin[1]
    dy = origin[0] - target[0]
    if abs(dx) < 1e-9 and abs(dy) < 1e-9:
        return None
    return math.degrees(math.atan2(dy, dx)) % 360.0


def wrap360(angle: float) -> float:
    a = float(angle) % 360.0
    return 0.0 if a >= 360.0 else a


def _ang_dist(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _orient(base_deg: float, hint: float | None) -> float:
    """Pick base or base + 180 to agree with the traced direction."""
    base = base_deg % 180.0
    if hint is not None and _ang_dist(base + 180.0, hint) < _ang_dist(base, hint):
        base += 180.0
    return wrap360(base)


def _branch_directions(sk: np.ndarray, r: int, c: int) -> list[float]:
    runs = _branches(sk, r, c)
    ring = {p for run in runs for p in run}
    dirs = []
    for run in runs:
        d = _direction_deg((r, c), _branch_centroid(sk, (r, c), run, ring - set(run)))
        if d is not None:
            dirs.append(d)
    return dirs


def _termination_hint(sk: np.ndarray, r: int, c: int) -> float | None:
    dirs = _branch_directions(sk, r, c)
    return dirs[0] if dirs else None


def _bifurcation_hint(sk: np.ndarray, r: int, c: int) -> float | None:
    dirs = _branch_directions(sk, r, c)
    if len(dirs) < 2:
        return None
    best = None
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            sep = _ang_dist(dirs[i], dirs[j])
            if best is None or sep < best[0]:
                best = (sep, dirs[i], dirs[j])
    _, a, b = best
    ax = math.cos(math.radians(a)) + math.cos(math.radians(b))
    ay = math.sin(math.radians(a)) + math.sin(math.radians(b))
    if abs(ax) < 1e-12 and abs(ay) < 1e-12:
        return None
    return (math.degrees(math.atan2(ay, ax)) + 180.0) % 360.0


def extract_minutiae(
    skeleton: np.ndarray,
    field: OrientationField,
    border_margin: int = 10,
    merge_radius: float = 5.0,
    coherence_threshold: float = COHERENCE_THRESHOLD,
) -> MinutiaeSet:
    """Terminations and bifurcations of ``skeleton``.

    Candidates within ``border_margin`` pixels of the frame or in blocks
    whose coherence is below ``coherence_threshold`` are dropped. Of two
    candidates closer than ``merge_radius`` the one with higher quality
    (block coherence) survives.
    """
    sk = np.asarray(skeleton, dtype=bool)
    if tuple(sk.shape) != tuple(field.shape):
        raise ParameterError(
            f"skeleton {sk.shape} and orientation field {field.shape} differ in size"
        )
    rows, cols = sk.shape
    cn = crossing_number_map(sk)
    candidates = []
    for r, c in zip(*np.nonzero((cn == 1) | (cn == 3))):
        r, c = int(r), int(c)
        if min(r, c, rows - 1 - r, cols - 1 - c) < border_margin:
            continue
        quality = field.coherence_at(r, c)
        if quality < coherence_threshold:
            continue
        base = math.degrees(field.angle_at(r, c))
        if cn[r, c] == 1:
            kind, hint = TERMINATION, _termination_hint(sk, r, c)
        else:
            kind, hint = BIFURCATION, _bifurcation_hint(sk, r, c)
        candidates.append(Minutia(c, r, _orient(base, hint), kind, min(max(quality, 0.0), 1.0)))

    candidates.sort(key=lambda m: (-m.quality, m.y, m.x))
    kept: list[Minutia] = []
    for m in candidates:
        if all(math.hypot(m.x - k.x, m.y - k.y) >= merge_radius for k in kept):
            kept.append(m)
    return MinutiaeSet(rows, cols, tuple(kept))


def rigid_transform(
    ms: MinutiaeSet,
    angle_deg: float,
    translation: tuple[float, float] = (0.0, 0.0),
    center: tuple[float, float] | None = None,
    rows: int | None = None,
    cols: int | None = None,
) -> MinutiaeSet:
    """Rotate (counter-clockwise, y up) about ``center`` and translate.

    ``translation`` is ``(dx, dy)`` in image coordinates (dy down).
    """
    xy = ms.xy()
    if center is None:
        center = tuple(xy.mean(axis=0)) if len(xy) else (0.0, 0.0)
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    out = []
    for m in ms:
        dx, dy_up = m.x - center[0], -(m.y - center[1])
        nx = center[0] + ca * dx - sa * dy_up + translation[0]
        ny = center[1] - (sa * dx + ca * dy_up) + translation[1]
        out.append(Minutia(nx, ny, wrap360(m.theta + angle_deg), m.kind, m.quality))
    return MinutiaeSet(rows or ms.rows, cols or ms.cols, tuple(out))
