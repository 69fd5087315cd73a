"""System configuration persisted as a flat JSON object.

Keys (all optional when loading; missing keys take the defaults below)::

    checkpoint            path of the network checkpoint (relative to the file)
    store_dir             template store directory (relative to the file)
    seed                  integer seed for every randomised step
    amt_window, amt_offset
    block_size, border_margin, merge_radius, coherence_threshold
    distance_abs, distance_rel, angle_tolerance, max_distance, position_tolerance
    margin                contrastive-loss margin
    w_d, w_m              fusion weights
    min_d, max_d, min_m, max_m   calibration bounds (null until trained)
    operating_threshold   decision threshold on S_f (null until evaluated)

Precedence when the CLI builds a configuration: command-line flags, then the
config file, then these defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ParameterError
from .features import ExtractionParams
from .fusion import FusionWeights, ScoreCalibration
from .imaging import ThresholdParams
from .matcher import MatcherTolerances
from .siamese import ContrastiveConfig


@dataclass(frozen=True)
class SystemConfig:
    checkpoint: str | None = None
    store_dir: str = "templates"
    seed: int = 0
    amt_window: int = 15
    amt_offset: float = 5
    block_size: int = 16
    border_margin: int = 10
    merge_radius: float = 5.0
    coherence_threshold: float = 0.3
    distance_abs: float = 6.0
    distance_rel: float = 0.10
    angle_tolerance: float = 11.25
    max_distance: float = 120.0
    position_tolerance: float = 10.0
    margin: float = 1.0
    w_d: float = 0.4
    w_m: float = 0.6
    min_d: float | None = None
    max_d: float | None = None
    min_m: float | None = None
    max_m: float | None = None
    operating_threshold: float | None = None

    def __post_init__(self):
        FusionWeights(self.w_d, self.w_m)
        ThresholdParams(self.amt_window, self.amt_offset)

    def extraction(self) -> ExtractionParams:
        return ExtractionParams(ThresholdParams(self.amt_window, self.amt_offset), self.block_size,
                                self.border_margin, self.merge_radius, self.coherence_threshold)

    def tolerances(self) -> MatcherTolerances:
        return MatcherTolerances(self.distance_abs, self.distance_rel, self.angle_tolerance,
                                 self.max_distance, self.position_tolerance)

    def weights(self) -> FusionWeights:
        return FusionWeights(self.w_d, self.w_m)

    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.margin)

    def calibration(self) -> ScoreCalibration | None:
        vals = (self.min_d, self.max_d, self.min_m, self.max_m)
        if any(v is None for v in vals):
            return None
        return ScoreCalibration(*vals)

    def with_calibration(self, cal: ScoreCalibration) -> SystemConfig:
        return replace(self, min_d=cal.min_d, max_d=cal.max_d, min_m=cal.min_m, max_m=cal.max_m)

    def override(self, **kw) -> SystemConfig:
        """Replace fields whose value is not ``None``."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SystemConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ParameterError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> SystemConfig:
        """Read a config; relative paths inside are taken relative to the file."""
        path = Path(path)
        try:
            cfg = cls.from_json(path.read_text())
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from exc
        base = path.resolve().parent
        upd = {}
        for key in ("checkpoint", "store_dir"):
            val = getattr(cfg, key)
            if val is not None and not Path(val).is_absolute():
                upd[key] = str(base / val)
        return replace(cfg, **upd)
