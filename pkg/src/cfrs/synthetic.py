"""Procedural fingerprint-like images and minutiae sets.

A finger is a phase field: a planar wave of wavelength ``lambda`` running at
a base angle, bent by a few low-frequency sinusoids, plus one spiral term
``+-atan2`` per planted minutia. Each spiral adds or removes one ridge and
so leaves a termination or a bifurcation at its centre (which of the two is
decided by the local phase). Ridges are dark where ``cos(phase) > 0``.

Impressions re-sample the same analytic field through a rigid pose and add
contrast jitter and pixel noise, so planted minutiae move exactly with the
pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .imaging import write_image
from .minutiae import BIFURCATION, TERMINATION, Minutia, MinutiaeSet

SKIN_TINT = np.array([1.0, 0.86, 0.74])


@dataclass(frozen=True)
class Pose:
    rotation: float = 0.0      # degrees, counter-clockwise with y up
    dx: float = 0.0
    dy: float = 0.0            # pixels, image coordinates (y down)


@dataclass(frozen=True)
class SyntheticFingerSpec:
    seed: int
    impressions: int = 8
    shape: tuple[int, int] = (310, 240)
    wavelength: float = 10.0
    base_angle: float = 0.0                                  # degrees
    warp: tuple[tuple[float, float, float, float], ...] = ()  # (amp, kx, ky, phase)
    minutiae: tuple[tuple[float, float, int], ...] = ()      # (x, y, +-1)
    max_rotation: float = 10.0
    max_translation: float = 15.0
    brightness: float = 150.0
    contrast: float = 70.0
    contrast_jitter: float = 0.15
    noise: float = 6.0

    def __post_init__(self):
        if self.wavelength < 4:
            raise ParameterError(f"wavelength must be >= 4 px, got {self.wavelength}")
        if self.impressions < 1:
            raise ParameterError("need at least one impression")
        rows, cols = self.shape
        for x, y, s in self.minutiae:
            if not (0 <= x < cols and 0 <= y < rows) or s not in (-1, 1):
                raise ParameterError(f"bad planted minutia {(x, y, s)}")

    @classmethod
    def random(cls, seed: int, impressions: int = 8, n_minutiae: int = 12,
               shape: tuple[int, int] = (310, 240), wavelength: tuple[float, float] = (9.0, 11.0),
               margin: float = 35.0, min_separation: float = 30.0, warp_terms: int = 4,
               **kw) -> SyntheticFingerSpec:
        """Draw a finger (angle, wavelength, warp, minutiae plan) from ``seed``."""
        rng = np.random.default_rng(seed)
        rows, cols = shape
        lam = float(rng.uniform(*wavelength))
        angle = float(rng.uniform(0.0, 180.0))
        warp = []
        for _ in range(warp_terms):
            freq = rng.uniform(1 / 400, 1 / 150)
            d = rng.uniform(0, 2 * np.pi)
            # keep each term's slope well under the carrier frequency
            amp = 0.05 / (2 * np.pi * freq)
            warp.append((float(amp), float(2 * np.pi * freq * math.cos(d)),
                         float(2 * np.pi * freq * math.sin(d)), float(rng.uniform(0, 2 * np.pi))))
        plan = random_minutiae(n_minutiae, int(rng.integers(2**31)), shape, margin, min_separation)
        signs = rng.choice([-1, 1], n_minutiae)
        minutiae = tuple((m.x, m.y, int(s)) for m, s in zip(plan, signs))
        return cls(seed=seed, impressions=impressions, shape=(rows, cols), wavelength=lam,
                   base_angle=angle, warp=tuple(warp), minutiae=minutiae, **kw)

    def to_text(self) -> str:
        lines = [
            f"seed {self.seed}",
            f"impressions {self.impressions}",
            f"shape {self.shape[0]} {self.shape[1]}",
            f"wavelength {self.wavelength!r}",
            f"base_angle {self.base_angle!r}",
            f"max_rotation {self.max_rotation!r}",
            f"max_translation {self.max_translation!r}",
            f"brightness {self.brightness!r}",
            f"contrast {self.contrast!r}",
            f"contrast_jitter {self.contrast_jitter!r}",
            f"noise {self.noise!r}",
        ]
        lines += ["warp " + " ".join(repr(v) for v in w) for w in self.warp]
        lines += [f"minutia {x!r} {y!r} {s}" for x, y, s in self.minutiae]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SyntheticFingerSpec:
        kw: dict = {}
        warp, minutiae = [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, *vals = line.split()
            if key == "warp":
                warp.append(tuple(float(v) for v in vals))
            elif key == "minutia":
                minutiae.append((float(vals[0]), float(vals[1]), int(vals[2])))
            elif key in ("seed", "impressions"):
                kw[key] = int(vals[0])
            elif key == "shape":
                kw[key] = (int(vals[0]), int(vals[1]))
            else:
                kw[key] = float(vals[0])
        return cls(warp=tuple(warp), minutiae=tuple(minutiae), **kw)


def _source_coords(shape: tuple[int, int], pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Pattern coordinates sampled by every output pixel under ``pose``."""
    rows, cols = shape
    cy, cx = (rows - 1) / 2, (cols - 1) / 2
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    u = xx - cx - pose.dx
    v = -(yy - cy - pose.dy)  # y up
    a = math.radians(-pose.rotation)
    ca, sa = math.cos(a), math.sin(a)
    return cx + ca * u - sa * v, cy - (sa * u + ca * v)


def phase_field(spec: SyntheticFingerSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    a = math.radians(spec.base_angle)
    phi = (2 * np.pi / spec.wavelength) * (x * math.sin(a) + y * math.cos(a))
    for amp, kx, ky, ph in spec.warp:
        phi += amp * np.sin(kx * x + ky * y + ph)
    for mx, my, s in spec.minutiae:
        phi += s * np.arctan2(y - my, x - mx)
    return phi


def render(spec: SyntheticFingerSpec, pose: Pose = Pose(), contrast: float | None = None,
           noise: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """One RGB uint8 impression; ``noise`` is the pixel noise std (needs ``rng``)."""
    x, y = _source_coords(spec.shape, pose)
    amp = spec.contrast if contrast is None else contrast
    g = spec.brightness - amp * np.cos(phase_field(spec, x, y))
    rgb = g[:, :, None] * SKIN_TINT
    if noise > 0:
        if rng is None:
            raise ParameterError("noise requires an rng")
        rgb = rgb + rng.normal(0.0, noise, rgb.shape)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def impression_pose(spec: SyntheticFingerSpec, index: int) -> tuple[Pose, float, np.random.Generator]:
    """Seeded pose, contrast, and noise generator for impression ``index``."""
    rng = np.random.default_rng([spec.seed, index])
    pose = Pose(float(rng.uniform(-spec.max_rotation, spec.max_rotation)),
                float(rng.uniform(-spec.max_translation, spec.max_translation)),
                float(rng.uniform(-spec.max_translation, spec.max_translation)))
    contrast = spec.contrast * float(rng.uniform(1 - spec.contrast_jitter, 1 + spec.contrast_jitter))
    return pose, contrast, rng


def generate_finger(spec: SyntheticFingerSpec) -> list[np.ndarray]:
    """All impressions of one finger, each under its own seeded perturbation."""
    out = []
    for k in range(spec.impressions):
        pose, contrast, rng = impression_pose(spec, k)
        out.append(render(spec, pose, contrast, spec.noise, rng))
    return out


def planted_positions(spec: SyntheticFingerSpec, pose: Pose = Pose()) -> np.ndarray:
    """Where the planted minutiae land in an impression taken under ``pose``."""
    rows, cols = spec.shape
    cy, cx = (rows - 1) / 2, (cols - 1) / 2
    a = math.radians(pose.rotation)
    ca, sa = math.cos(a), math.sin(a)
    pts = []
    for mx, my, _ in spec.minutiae:
        u, v = mx - cx, -(my - cy)
        pts.append((cx + ca * u - sa * v + pose.dx, cy - (sa * u + ca * v) + pose.dy))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def finger_ids(fingers: int) -> list[str]:
    return [f"f{k:03d}" for k in range(fingers)]


def generate_dataset(root: str | Path, fingers: int, impressions: int, seed: int,
                     **spec_kw) -> list[SyntheticFingerSpec]:
    """Write ``<root>/<fingerId>/<index>.png`` plus a ``synthetic_spec.txt`` sidecar."""
    if fingers < 2 or impressions < 2:
        raise ParameterError("need at least 2 fingers and 2 impressions")
    root = Path(root)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise FileExistsError(f"{root} exists and is not empty; refusing to overwrite")
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.default_rng(seed).integers(0, 2**31, fingers)
    specs = []
    sidecar = [f"# synthetic dataset: fingers {fingers} impressions {impressions} seed {seed}\n"]
    for fid, s in zip(finger_ids(fingers), seeds):
        spec = SyntheticFingerSpec.random(int(s), impressions, **spec_kw)
        specs.append(spec)
        d = root / fid
        d.mkdir()
        for k, img in enumerate(generate_finger(spec)):
            write_image(d / f"{k}.png", img)
        sidecar.append(f"[{fid}]\n{spec.to_text()}")
    (root / "synthetic_spec.txt").write_text("".join(sidecar))
    return specs


def random_minutiae(n: int, seed: int, shape: tuple[int, int] = (310, 240),
                    margin: float = 40.0, min_separation: float = 15.0) -> MinutiaeSet:
    """``n`` minutiae with uniform positions/directions, at least ``min_separation`` apart."""
    rng = np.random.default_rng(seed)
    rows, cols = shape
    pts: list[tuple[float, float]] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 100000:
            raise ParameterError("cannot place minutiae with the requested separation")
        x = float(rng.uniform(margin, cols - margin))
        y = float(rng.uniform(margin, rows - margin))
        if all(math.hypot(x - a, y - b) >= min_separation for a, b in pts):
            pts.append((x, y))
    thetas = rng.uniform(0.0, 360.0, n)
    kinds = rng.integers(0, 2, n)
    items = tuple(
        Minutia(x, y, float(t) % 360.0, TERMINATION if k == 0 else BIFURCATION)
        for (x, y), t, k in zip(pts, thetas, kinds)
    )
    return MinutiaeSet(rows, cols, items)
