"""Rotation/translation invariant minutiae matching in the style of BOZORTH3.

Each minutiae set is summarised by a pair table: for every pair of
minutiae within ``max_distance`` the inter-minutia distance and both
minutia directions measured relative to the line joining them. These
quantities do not change under rigid motion, so two pair-table entries
(one from each print) that agree within tolerance are evidence that the
four minutiae correspond.

Every compatible entry pair fixes a candidate rigid alignment of the probe
onto the reference. Under a candidate alignment, probe and reference
minutiae are paired when their positions agree within
``tolerances.position`` and their directions within ``tolerances.angle``;
the largest one-to-one pairing over all candidates is the score. Because
every correspondence in that pairing shares the alignment rotation to
within ``angle``, the relative-rotation spread is at most ``2 * angle``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .minutiae import MinutiaeSet


@dataclass(frozen=True)
class MatcherTolerances:
    distance_abs: float = 6.0    # px
    distance_rel: float = 0.10   # fraction of the pair distance
    angle: float = 11.25         # degrees
    max_distance: float = 120.0  # px, longest pair kept in the table
    position: float = 10.0       # px, residual allowed after alignment


@dataclass(frozen=True)
class PairTableEntry:
    i: int
    j: int
    d: float
    beta1: float
    beta2: float


@dataclass(frozen=True)
class MinutiaMatchScore:
    value: int
    correspondences: tuple[tuple[int, int], ...] = ()


def _angle_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(np.asarray(a) - np.asarray(b)) % 360.0
    return np.minimum(d, 360.0 - d)


def _pair_arrays(ms: MinutiaeSet, max_distance: float) -> dict[str, np.ndarray]:
    xy = ms.xy()
    th = ms.thetas()
    n = len(ms)
    ii, jj = np.triu_indices(n, k=1)
    dx = xy[jj, 0] - xy[ii, 0]
    dy = -(xy[jj, 1] - xy[ii, 1])  # y up
    d = np.hypot(dx, dy)
    keep = (d <= max_distance) & (d > 0)
    ii, jj, dx, dy, d = ii[keep], jj[keep], dx[keep], dy[keep], d[keep]
    line = np.degrees(np.arctan2(dy, dx)) % 360.0
    b1 = (th[ii] - line) % 360.0
    b2 = (th[jj] - line) % 360.0
    order = np.lexsort((jj, ii, d))
    return {
        "i": ii[order], "j": jj[order], "d": d[order],
        "b1": b1[order], "b2": b2[order], "line": line[order],
    }


def build_pair_table(ms: MinutiaeSet, max_distance: float = 120.0) -> list[PairTableEntry]:
    """One entry per pair with distance ``<= max_distance``, sorted by ``d`` then ``(i, j)``."""
    t = _pair_arrays(ms, max_distance)
    return [
        PairTableEntry(int(i), int(j), float(d), float(b1), float(b2))
        for i, j, d, b1, b2 in zip(t["i"], t["j"], t["d"], t["b1"], t["b2"])
    ]


def _candidate_alignments(P: dict, R: dict, tol: MatcherTolerances):
    """Indices of compatible entry pairs, direct and with the reference pair reversed."""
    dp = P["d"][:, None]
    dr = R["d"][None, :]
    dist_ok = np.abs(dp - dr) <= np.maximum(tol.distance_abs, tol.distance_rel * 0.5 * (dp + dr))
    direct = (
        dist_ok
        & (_angle_diff(P["b1"][:, None], R["b1"][None, :]) <= tol.angle)
        & (_angle_diff(P["b2"][:, None], R["b2"][None, :]) <= tol.angle)
    )
    # reversing the reference pair turns its line by 180 degrees
    swapped = (
        dist_ok
        & (_angle_diff(P["b1"][:, None], R["b2"][None, :] - 180.0) <= tol.angle)
        & (_angle_diff(P["b2"][:, None], R["b1"][None, :] - 180.0) <= tol.angle)
    )
    pd, rd = np.nonzero(direct)
    ps, rs = np.nonzero(swapped)
    p_idx = np.concatenate([pd, ps])
    r_idx = np.concatenate([rd, rs])
    flip = np.concatenate([np.zeros(len(pd), bool), np.ones(len(ps), bool)])
    order = np.lexsort((flip, r_idx, p_idx))
    return p_idx[order], r_idx[order], flip[order]


def _alignments(probe: MinutiaeSet, ref: MinutiaeSet, P: dict, R: dict,
                p_idx: np.ndarray, r_idx: np.ndarray, flip: np.ndarray):
    """Rotation (deg) and the two midpoints for each candidate."""
    pxy = probe.xy()
    rxy = ref.xy()
    a = pxy[P["i"][p_idx]]
    b = pxy[P["j"][p_idx]]
    ra = np.where(flip[:, None], rxy[R["j"][r_idx]], rxy[R["i"][r_idx]])
    rb = np.where(flip[:, None], rxy[R["i"][r_idx]], rxy[R["j"][r_idx]])
    line_p = P["line"][p_idx]
    line_r = np.where(flip, (R["line"][r_idx] + 180.0) % 360.0, R["line"][r_idx])
    rot = (line_r - line_p) % 360.0
    return rot, 0.5 * (a + b), 0.5 * (ra + rb)


def _compat_tensor(probe: MinutiaeSet, ref: MinutiaeSet, rot: np.ndarray,
                   mid_p: np.ndarray, mid_r: np.ndarray, tol: MatcherTolerances):
    """Boolean (K, n_probe, n_ref) agreement after each alignment, plus residual distances."""
    pxy = probe.xy()
    rxy = ref.xy()
    rad = np.radians(rot)
    c, s = np.cos(rad)[:, None], np.sin(rad)[:, None]
    dx = pxy[None, :, 0] - mid_p[:, None, 0]
    dy = -(pxy[None, :, 1] - mid_p[:, None, 1])
    tx = mid_r[:, None, 0] + c * dx - s * dy
    ty = mid_r[:, None, 1] - (s * dx + c * dy)
    dist = np.hypot(tx[:, :, None] - rxy[None, None, :, 0], ty[:, :, None] - rxy[None, None, :, 1])
    tth = (probe.thetas()[None, :] + rot[:, None]) % 360.0
    ang = _angle_diff(tth[:, :, None], ref.thetas()[None, None, :])
    return (dist <= tol.position) & (ang <= tol.angle), dist


def _matching_size(mask: np.ndarray) -> int:
    rows = mask.sum(axis=1)
    cols = mask.sum(axis=0)
    if rows.max(initial=0) <= 1 and cols.max(initial=0) <= 1:
        return int(rows.sum())
    match = maximum_bipartite_matching(csr_matrix(mask.astype(np.int8)), perm_type="column")
    return int((match >= 0).sum())


def _best_assignment(mask: np.ndarray, dist: np.ndarray) -> tuple[tuple[int, int], ...]:
    """Maximum matching, ties broken by the smallest total residual distance."""
    big = 1.0 + float(dist[mask].sum()) if mask.any() else 1.0
    cost = np.where(mask, dist, big * (mask.shape[0] + 1))
    rows, cols = linear_sum_assignment(cost)
    return tuple((int(r), int(c)) for r, c in zip(rows, cols) if mask[r, c])


def match_minutiae(probe: MinutiaeSet, ref: MinutiaeSet,
                   tol: MatcherTolerances = MatcherTolerances(),
                   chunk: int = 512) -> MinutiaMatchScore:
    """Raw similarity ``S_m``: the size of the largest rigidly consistent correspondence set."""
    if len(probe) == 0 or len(ref) == 0:
        return MinutiaMatchScore(0, ())
    P = _pair_arrays(probe, tol.max_distance)
    R = _pair_arrays(ref, tol.max_distance)
    if len(P["d"]) == 0 or len(R["d"]) == 0:
        return MinutiaMatchScore(0, ())
    p_idx, r_idx, flip = _candidate_alignments(P, R, tol)
    if len(p_idx) == 0:
        return MinutiaMatchScore(0, ())
    rot, mid_p, mid_r = _alignments(probe, ref, P, R, p_idx, r_idx, flip)

    k = len(rot)
    bounds = np.empty(k, dtype=np.int64)
    for lo in range(0, k, chunk):
        mask, _ = _compat_tensor(probe, ref, rot[lo:lo + chunk], mid_p[lo:lo + chunk],
                                 mid_r[lo:lo + chunk], tol)
        bounds[lo:lo + chunk] = np.minimum(mask.any(axis=2).sum(axis=1), mask.any(axis=1).sum(axis=1))

    best, best_k = -1, -1
    for idx in np.lexsort((np.arange(k), -bounds)):
        if bounds[idx] < best:
            break
        mask, _ = _compat_tensor(probe, ref, rot[idx:idx + 1], mid_p[idx:idx + 1],
                                 mid_r[idx:idx + 1], tol)
        size = _matching_size(mask[0])
        if size > best or (size == best and idx < best_k):
            best, best_k = size, int(idx)

    mask, dist = _compat_tensor(probe, ref, rot[best_k:best_k + 1], mid_p[best_k:best_k + 1],
                                mid_r[best_k:best_k + 1], tol)
    pairs = _best_assignment(mask[0], dist[0])
    return MinutiaMatchScore(len(pairs), tuple(sorted(pairs)))
