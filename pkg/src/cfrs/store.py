"""Template store: enrollment from three photos and one-to-one verification.

A store is a directory holding one ``<userId>.tpl`` file per template and an
``index.txt`` listing the enrolled ids. A template file is::

    TEMPLATE v1 <userId> <timestamp>
    <16 lines, one embedding component each, 17 significant digits>
    MINUTIAE v1 <rows> <cols> <count>
    ...

Every write goes to a temporary file first and is moved into place with
``os.replace``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import EnrollmentConflict, IdentityNotFound, IngestionError, ParameterError
from .fusion import FusionWeights, ScoreCalibration, fused_score
from .matcher import MatcherTolerances, match_minutiae
from .minutiae import MinutiaeSet
from .siamese import similarity

USER_ID = re.compile(r"[A-Za-z0-9_.-]+")
INDEX = "index.txt"


class Extractor(Protocol):
    def embed(self, img: np.ndarray) -> np.ndarray: ...
    def minutiae(self, img: np.ndarray) -> MinutiaeSet: ...


@dataclass(frozen=True)
class Template:
    user_id: str
    embedding: np.ndarray
    minutiae: MinutiaeSet
    enrolled_at: str

    def to_text(self) -> str:
        lines = [f"TEMPLATE v1 {self.user_id} {self.enrolled_at}"]
        lines += ["%.17g" % v for v in self.embedding]
        return "\n".join(lines) + "\n" + self.minutiae.to_text()

    @classmethod
    def from_text(cls, text: str, dim: int = 16) -> Template:
        lines = text.splitlines()
        head = lines[0].split() if lines else []
        if len(head) != 4 or head[:2] != ["TEMPLATE", "v1"]:
            raise IngestionError(f"bad template header: {lines[:1]}")
        try:
            emb = np.array([float(v) for v in lines[1:1 + dim]], dtype=np.float64)
        except ValueError as exc:
            raise IngestionError(f"bad embedding value: {exc}") from exc
        if emb.shape != (dim,) or not np.all(np.isfinite(emb)):
            raise IngestionError("template embedding must hold finite values")
        ms = MinutiaeSet.from_text("\n".join(lines[1 + dim:]) + "\n")
        return cls(head[2], emb, ms, head[3])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Template) and self.user_id == other.user_id
                and self.enrolled_at == other.enrolled_at
                and np.array_equal(self.embedding, other.embedding)
                and self.minutiae == other.minutiae)


@dataclass(frozen=True)
class VerificationResult:
    user_id: str
    s_d: float
    s_m: int
    s_d_norm: float
    s_m_norm: float
    fused: float
    threshold: float

    @property
    def match(self) -> bool:
        return self.fused >= self.threshold

    @property
    def decision(self) -> str:
        return "match" if self.match else "no-match"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class TemplateStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, user_id: str) -> Path:
        if not USER_ID.fullmatch(user_id) or user_id in (".", ".."):
            raise ParameterError(f"invalid user id {user_id!r}")
        return self.root / f"{user_id}.tpl"

    def list(self) -> list[str]:
        idx = self.root / INDEX
        if not idx.exists():
            return []
        return [line for line in idx.read_text().splitlines() if line]

    def _write_index(self, ids: Sequence[str]) -> None:
        _atomic_write(self.root / INDEX, "".join(f"{u}\n" for u in sorted(ids)))

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.list()

    def get(self, user_id: str) -> Template:
        path = self._path(user_id)
        if user_id not in self.list() or not path.exists():
            raise IdentityNotFound(user_id)
        return Template.from_text(path.read_text())

    def add(self, template: Template) -> None:
        path = self._path(template.user_id)
        ids = self.list()
        if template.user_id in ids or path.exists():
            raise EnrollmentConflict(f"user {template.user_id!r} is already enrolled")
        _atomic_write(path, template.to_text())
        try:
            self._write_index(ids + [template.user_id])
        except BaseException:
            path.unlink(missing_ok=True)
            raise

    def remove(self, user_id: str) -> bool:
        """Delete a template; unknown ids are a no-op. Returns whether one existed."""
        path = self._path(user_id)
        ids = self.list()
        existed = user_id in ids
        if existed:
            self._write_index([u for u in ids if u != user_id])
        path.unlink(missing_ok=True)
        return existed

    def enroll(self, user_id: str, photos: Sequence[np.ndarray], extractor: Extractor,
               enrolled_at: str | None = None) -> Template:
        """Average the three photos' embeddings; minutiae come from the first photo."""
        if len(photos) != 3:
            raise ParameterError(f"enrollment needs exactly 3 photos, got {len(photos)}")
        self._path(user_id)
        if user_id in self.list():
            raise EnrollmentConflict(f"user {user_id!r} is already enrolled")
        embs = np.stack([np.asarray(extractor.embed(p), dtype=np.float64) for p in photos])
        # anchored on the first vector so three equal embeddings average exactly
        mean = embs[0] + ((embs[1] - embs[0]) + (embs[2] - embs[0])) / 3.0
        if not np.all(np.isfinite(mean)):
            raise ParameterError("enrollment embedding is not finite")
        template = Template(user_id, mean, extractor.minutiae(photos[0]), enrolled_at or _now())
        self.add(template)
        return template

    def verify(self, user_id: str, photo: np.ndarray, extractor: Extractor,
               calibration: ScoreCalibration, threshold: float,
               weights: FusionWeights = FusionWeights(),
               tolerances: MatcherTolerances = MatcherTolerances()) -> VerificationResult:
        template = self.get(user_id)
        emb = extractor.embed(photo)
        ms = extractor.minutiae(photo)
        sd = similarity(emb, template.embedding)
        sm = match_minutiae(ms, template.minutiae, tolerances).value
        dn, mn, sf = fused_score(sd, sm, calibration, weights)
        return VerificationResult(user_id, sd, sm, dn, mn, sf, float(threshold))
