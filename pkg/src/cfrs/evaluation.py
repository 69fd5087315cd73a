"""Verification protocol and error-rate metrics (EER, FMR100, FMR1000, ROC/DET).

Scores are similarities: higher means more alike. At threshold ``th``::

    FMR(th)  = #{impostor >= th} / #impostor
    FNMR(th) = #{genuine  <  th} / #genuine

Candidate thresholds are the observed scores and the midpoints between
consecutive distinct ones. Rates are compared as integer cross products so
threshold selection is exact.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError, ProtocolError
from .fusion import ScoreCalibration, calibrate, fused_score
from .imaging import read_image

log = logging.getLogger(__name__)

APPROACHES = ("embedding", "minutiae", "fusion")


@dataclass(frozen=True)
class PairProtocol:
    fingers: int
    impressions: int
    impostor_sets: int = 3

    def __post_init__(self):
        if self.fingers < 2 or self.impressions < 2:
            raise ProtocolError("need at least 2 fingers and 2 impressions per finger")
        if not 1 <= self.impostor_sets <= self.impressions:
            raise ProtocolError(
                f"impostor_sets must be in [1, {self.impressions}], got {self.impostor_sets}")


Pair = tuple[tuple[int, int], tuple[int, int]]  # ((finger, impression), (finger, impression))


def generate_pairs(p: PairProtocol) -> tuple[list[Pair], list[Pair]]:
    """Genuine: every impression pair within a finger. Impostor: every finger
    pair at impression k, for k in 0..impostor_sets-1."""
    genuine = [((f, a), (f, b)) for f in range(p.fingers)
               for a, b in combinations(range(p.impressions), 2)]
    impostor = [((f, k), (g, k)) for k in range(p.impostor_sets)
                for f, g in combinations(range(p.fingers), 2)]
    return genuine, impostor


# metrics -------------------------------------------------------------------

def _prepare(genuine: Sequence[float], impostor: Sequence[float]):
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(impostor, dtype=np.float64))
    if g.size == 0 or i.size == 0:
        raise ProtocolError("genuine and impostor score lists must be non-empty")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
        raise ProtocolError("scores must be finite")
    return g, i


def candidate_thresholds(genuine: Sequence[float], impostor: Sequence[float]) -> np.ndarray:
    """Observed scores plus midpoints of consecutive distinct scores, ascending."""
    u = np.unique(np.concatenate([np.asarray(genuine, float), np.asarray(impostor, float)]))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2
    return np.unique(np.concatenate([u, mids]))


def error_counts(genuine: Sequence[float], impostor: Sequence[float],
                 thresholds: np.ndarray | None = None):
    """(thresholds, false-match counts, false-non-match counts, n_genuine, n_impostor)."""
    g, i = _prepare(genuine, impostor)
    th = candidate_thresholds(g, i) if thresholds is None else np.asarray(thresholds, float)
    fm = i.size - np.searchsorted(i, th, side="left")
    fnm = np.searchsorted(g, th, side="left")
    return th, fm.astype(np.int64), fnm.astype(np.int64), g.size, i.size


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    fmr: float
    fnmr: float


def compute_eer(genuine: Sequence[float], impostor: Sequence[float]) -> EerResult:
    """Threshold minimising |FMR - FNMR| (lowest on ties); EER = (FMR + FNMR) / 2."""
    th, fm, fnm, ng, ni = error_counts(genuine, impostor)
    gap = np.abs(fm * ng - fnm * ni)  # |FMR - FNMR| * ng * ni, exact
    k = int(np.argmin(gap))           # first minimum = lowest threshold
    eer = Fraction(int(fm[k]) * ng + int(fnm[k]) * ni, 2 * ng * ni)
    return EerResult(float(eer), float(th[k]), float(Fraction(int(fm[k]), ni)),
                     float(Fraction(int(fnm[k]), ng)))


@dataclass(frozen=True)
class FmrResult:
    fnmr: float
    threshold: float
    attained: bool   # False: no candidate met the FMR bound, strictest threshold reported


def _fmr_bound(th, fm, fnm, ng, ni, denominator: int) -> FmrResult:
    ok = fm * denominator <= ni  # FMR <= 1/denominator
    if ok.any():
        idx = np.nonzero(ok)[0]
        k = int(idx[np.argmin(fnm[idx])])  # lowest such threshold on ties
        return FmrResult(float(Fraction(int(fnm[k]), ng)), float(th[k]), True)
    k = len(th) - 1
    return FmrResult(float(Fraction(int(fnm[k]), ng)), float(th[k]), False)


def compute_fmrN(genuine: Sequence[float], impostor: Sequence[float]) -> tuple[FmrResult, FmrResult]:
    """(FMR100, FMR1000): lowest FNMR with FMR capped at 1% and 0.1%."""
    th, fm, fnm, ng, ni = error_counts(genuine, impostor)
    return _fmr_bound(th, fm, fnm, ng, ni, 100), _fmr_bound(th, fm, fnm, ng, ni, 1000)


def curve(genuine: Sequence[float], impostor: Sequence[float]) -> list[tuple[float, float, float]]:
    """(threshold, FMR, FNMR) over the candidate thresholds in ascending order."""
    th, fm, fnm, ng, ni = error_counts(genuine, impostor)
    return [(float(t), int(a) / ni, int(b) / ng) for t, a, b in zip(th, fm, fnm)]


# dataset -------------------------------------------------------------------

def load_dataset(root: str | Path) -> dict[str, list[Path]]:
    """``<root>/<fingerId>/<index>.png`` with indices 0..I-1, same I everywhere."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: dataset directory not found")
    out: dict[str, list[Path]] = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(d.glob("*.png"))
        idx = []
        for f in files:
            if not f.stem.isdigit():
                raise IngestionError(f"{f}: impression file name must be a zero-based index")
            idx.append(int(f.stem))
        if sorted(idx) != list(range(len(idx))) or not idx:
            raise IngestionError(f"{d}: impressions must be numbered 0..I-1 without gaps")
        out[d.name] = [d / f"{k}.png" for k in range(len(idx))]
    if len(out) < 2:
        raise IngestionError(f"{root}: need at least two finger directories")
    counts = {len(v) for v in out.values()}
    if len(counts) != 1:
        bad = [k for k, v in out.items() if len(v) != min(counts)][0]
        raise IngestionError(f"{root / bad}: every finger needs the same number of impressions")
    return out


def split_fingers(ids: Sequence[str], subset: str) -> list[str]:
    """``train`` = first half of the sorted ids, ``test`` = the rest, ``all``."""
    ids = sorted(ids)
    half = len(ids) // 2
    if subset == "train":
        return ids[:half]
    if subset == "test":
        return ids[half:]
    if subset == "all":
        return ids
    raise ProtocolError(f"unknown subset {subset!r}")


def load_images(dataset: dict[str, list[Path]], fingers: Sequence[str]) -> dict[str, list[np.ndarray]]:
    out = {}
    for f in fingers:
        imgs = []
        for p in dataset[f]:
            try:
                imgs.append(read_image(p))
            except Exception as exc:
                raise IngestionError(f"{p}: {exc}") from exc
        out[f] = imgs
    return out


# report --------------------------------------------------------------------

@dataclass
class EvalReport:
    genuine: dict[str, list[float]]
    impostor: dict[str, list[float]]
    eer: dict[str, EerResult] = field(default_factory=dict)
    fmr100: dict[str, FmrResult] = field(default_factory=dict)
    fmr1000: dict[str, FmrResult] = field(default_factory=dict)
    curves: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    calibration: ScoreCalibration | None = None

    @classmethod
    def from_scores(cls, genuine: dict[str, list[float]], impostor: dict[str, list[float]],
                    calibration: ScoreCalibration | None = None) -> EvalReport:
        rep = cls(genuine, impostor, calibration=calibration)
        for a in APPROACHES:
            rep.eer[a] = compute_eer(genuine[a], impostor[a])
            rep.fmr100[a], rep.fmr1000[a] = compute_fmrN(genuine[a], impostor[a])
            rep.curves[a] = curve(genuine[a], impostor[a])
        return rep

    def roc(self, approach: str) -> list[tuple[float, float]]:
        """(FMR, 1 - FNMR) samples."""
        return [(fmr, 1.0 - fnmr) for _, fmr, fnmr in self.curves[approach]]

    def det(self, approach: str) -> list[tuple[float, float]]:
        """(FMR, FNMR) samples."""
        return [(fmr, fnmr) for _, fmr, fnmr in self.curves[approach]]

    def summary(self) -> str:
        ng = len(self.genuine["fusion"])
        ni = len(self.impostor["fusion"])
        names = {"embedding": "Embedding (siamese)", "minutiae": "Minutiae", "fusion": "Fusion"}
        out = [f"Comparisons: {ng} genuine / {ni} impostor", "",
               "Equal error rate", f"{'Approach':<22}{'EER (%)':>10}{'threshold':>14}"]
        for a in APPROACHES:
            e = self.eer[a]
            out.append(f"{names[a]:<22}{100 * e.eer:>10.2f}{e.threshold:>14.6g}")
        out += ["", "FNMR at fixed FMR", f"{'Approach':<22}{'FMR100':>10}{'FMR1000':>10}"]
        for a in APPROACHES:
            f1, f2 = self.fmr100[a], self.fmr1000[a]
            c1 = "" if f1.attained else "*"
            c2 = "" if f2.attained else "*"
            out.append(f"{names[a]:<22}{f1.fnmr:>9.3f}{c1:1}{f2.fnmr:>9.3f}{c2:1}")
        if not all(self.fmr100[a].attained and self.fmr1000[a].attained for a in APPROACHES):
            out.append("* FMR bound not reachable with this many impostor scores; "
                       "FNMR at the strictest threshold")
        return "\n".join(out) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["approach", "kind", "score"])
            for a in APPROACHES:
                w.writerows((a, "genuine", repr(s)) for s in self.genuine[a])
                w.writerows((a, "impostor", repr(s)) for s in self.impostor[a])
        with open(out / "curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["approach", "threshold", "fmr", "fnmr"])
            for a in APPROACHES:
                w.writerows((a, repr(t), repr(fmr), repr(fnmr)) for t, fmr, fnmr in self.curves[a])
        (out / "summary.txt").write_text(self.summary())


def score_pairs(features: dict, fingers: Sequence[str], protocol: PairProtocol,
                pipeline) -> tuple[dict[str, list[float]], dict[str, list[float]]]:
    """Raw (S_d, S_m) for every protocol pair; ``features[finger][k]`` are cached."""
    genuine, impostor = generate_pairs(protocol)
    out = []
    for pairs in (genuine, impostor):
        sd, sm = [], []
        for (f1, k1), (f2, k2) in pairs:
            d, m = pipeline.raw_scores(features[fingers[f1]][k1], features[fingers[f2]][k2])
            sd.append(d)
            sm.append(float(m))
        out.append({"embedding": sd, "minutiae": sm})
    return out[0], out[1]


def extract_all(images: dict[str, list[np.ndarray]], pipeline) -> dict:
    return {f: [pipeline.features(im) for im in imgs] for f, imgs in images.items()}


def fuse_scores(genuine: dict, impostor: dict, calibration: ScoreCalibration, weights) -> None:
    for scores in (genuine, impostor):
        scores["fusion"] = [fused_score(d, m, calibration, weights)[2]
                            for d, m in zip(scores["embedding"], scores["minutiae"])]


def calibrate_from(genuine: dict, impostor: dict) -> ScoreCalibration:
    return calibrate(genuine["embedding"] + impostor["embedding"],
                     genuine["minutiae"] + impostor["minutiae"])


def run_evaluation(dataset_root: str | Path, pipeline, subset: str = "test",
                   calibration: ScoreCalibration | None = None,
                   impostor_sets: int = 3) -> EvalReport:
    """Score every protocol pair of ``subset`` under all three approaches.

    Without a calibration the bounds are taken from the scores themselves.
    """
    dataset = load_dataset(dataset_root)
    fingers = split_fingers(list(dataset), subset)
    impressions = len(next(iter(dataset.values())))
    protocol = PairProtocol(len(fingers), impressions, min(impostor_sets, impressions))
    log.info("evaluating %d fingers x %d impressions", len(fingers), impressions)
    feats = extract_all(load_images(dataset, fingers), pipeline)
    genuine, impostor = score_pairs(feats, fingers, protocol, pipeline)
    if calibration is None:
        calibration = calibrate_from(genuine, impostor)
    fuse_scores(genuine, impostor, calibration, pipeline.config.weights())
    return EvalReport.from_scores(genuine, impostor, calibration)
