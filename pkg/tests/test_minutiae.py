import math

import numpy as np
import pytest

from cfrs.errors import ParameterError
from cfrs.minutiae import (
    BIFURCATION,
    TERMINATION,
    Minutia,
    MinutiaeSet,
    crossing_number,
    extract_minutiae,
    rigid_transform,
)
from cfrs.ridges import OrientationField

# clockwise ring starting at the top-left corner; independent of the
# implementation's own neighbour ordering
RING_CW = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)]


def runs_oracle(nb):
    """Number of maximal runs of set pixels around the ring (CN by counting)."""
    s = "".join("1" if nb[r][c] else "0" for r, c in RING_CW)
    if s == "1" * 8:
        return 0
    # rotate so the string starts with a 0, then count '1' blocks
    k = s.index("0")
    s = s[k:] + s[:k]
    return len([b for b in s.split("0") if b])


def all_neighbourhoods():
    for code in range(256):
        nb = np.zeros((3, 3), bool)
        nb[1, 1] = True
        for bit, (r, c) in enumerate(RING_CW):
            nb[r, c] = bool(code >> bit & 1)
        yield nb


def cn_positions_oracle(sk):
    """Brute-force: every skeleton pixel's 3x3 window through crossing_number."""
    p = np.pad(sk, 1)
    ends, forks = [], []
    for r, c in zip(*np.nonzero(sk)):
        cn = runs_oracle(p[r : r + 3, c : c + 3])
        if cn == 1:
            ends.append((c, r))
        elif cn == 3:
            forks.append((c, r))
    return ends, forks


def y_skeleton(shape=(80, 80), junction=(35, 40), arm=15):
    sk = np.zeros(shape, bool)
    r, c = junction
    sk[r, c] = True
    for k in range(1, arm + 1):
        sk[r - k, c] = True
        sk[r + k, c - k] = True
        sk[r + k, c + k] = True
    return sk


def uniform(shape, angle=0.0):
    return OrientationField.uniform(shape, angle, 1.0)


class TestCrossingNumber:
    def test_termination(self):
        nb = np.array([[0, 0, 0], [0, 1, 1], [0, 0, 0]])
        assert crossing_number(nb) == 1

    def test_line_interior(self):
        nb = np.array([[0, 1, 0], [0, 1, 0], [0, 1, 0]])
        assert crossing_number(nb) == 2

    def test_bifurcation(self):
        nb = np.array([[0, 1, 0], [0, 1, 0], [1, 0, 1]])
        assert crossing_number(nb) == 3

    def test_exhaustive_against_runs_oracle(self):
        table = [runs_oracle(nb) for nb in all_neighbourhoods()]
        assert [crossing_number(nb) for nb in all_neighbourhoods()] == table
        assert table.count(1) == 56  # one run: 8 start positions x lengths 1..7

    def test_center_must_be_set(self):
        with pytest.raises(ParameterError):
            crossing_number(np.zeros((3, 3)))


class TestExtraction:
    def test_empty(self):
        ms = extract_minutiae(np.zeros((40, 40), bool), uniform((40, 40)))
        assert len(ms) == 0

    def test_straight_line(self):
        sk = np.zeros((60, 60), bool)
        sk[30, 15:45] = True
        ms = extract_minutiae(sk, uniform((60, 60)))
        assert ms.count(TERMINATION) == 2 and ms.count(BIFURCATION) == 0
        assert {(m.x, m.y) for m in ms} == {(15, 30), (44, 30)}
        # each points along the ridge, away from its own end
        by_x = {m.x: m.theta for m in ms}
        assert by_x[15] == 0.0 and by_x[44] == 180.0

    def test_y_shape_matches_brute_force(self):
        sk = y_skeleton()
        ends, forks = cn_positions_oracle(sk)
        assert sorted(ends) == [(25, 50), (40, 20), (55, 50)]
        assert forks == [(40, 35)]
        ms = extract_minutiae(sk, uniform(sk.shape, math.pi / 2))
        got_ends = sorted((m.x, m.y) for m in ms if m.kind == TERMINATION)
        got_forks = [(m.x, m.y) for m in ms if m.kind == BIFURCATION]
        assert got_ends == sorted(ends)
        assert len(got_forks) == 1
        assert abs(got_forks[0][0] - 40) <= 1 and abs(got_forks[0][1] - 35) <= 1

    def test_bifurcation_points_at_the_lone_branch(self):
        # reversed bisector of the two lower arms points up the stem (90 deg)
        sk = y_skeleton()
        ms = extract_minutiae(sk, uniform(sk.shape, math.pi / 2))
        fork = [m for m in ms if m.kind == BIFURCATION][0]
        assert fork.theta == 90.0

    def test_kind_reproduced_by_crossing_number(self):
        sk = y_skeleton()
        p = np.pad(sk, 1)
        for m in extract_minutiae(sk, uniform(sk.shape)):
            cn = crossing_number(p[m.y : m.y + 3, m.x : m.x + 3])
            assert cn == (1 if m.kind == TERMINATION else 3)

    @pytest.mark.parametrize("dx,dy", [(3, 0), (0, 7), (-5, 4), (9, -6)])
    def test_translation(self, dx, dy):
        sk = y_skeleton((100, 100), (45, 50))
        a = extract_minutiae(sk, uniform(sk.shape))
        b = extract_minutiae(np.roll(sk, (dy, dx), axis=(0, 1)), uniform(sk.shape))
        assert [(m.x + dx, m.y + dy, m.kind) for m in a] == [(m.x, m.y, m.kind) for m in b]

    def test_border_margin(self):
        sk = np.zeros((60, 60), bool)
        sk[30, 3:45] = True
        ms = extract_minutiae(sk, uniform((60, 60)), border_margin=10)
        assert [(m.x, m.y) for m in ms] == [(44, 30)]
        for m in extract_minutiae(sk, uniform((60, 60)), border_margin=0):
            assert m.x >= 0

    def test_incoherent_blocks_suppressed(self):
        sk = np.zeros((64, 64), bool)
        sk[30, 15:45] = True
        field = OrientationField.uniform((64, 64), 0.0, 0.2)
        assert len(extract_minutiae(sk, field)) == 0

    def test_merge_keeps_higher_quality(self):
        sk = np.zeros((64, 64), bool)
        sk[20, 14:18] = True  # a 4-pixel segment: two ends 3 px apart
        field = OrientationField.uniform((64, 64), 0.0, 1.0)
        ms = extract_minutiae(sk, field)
        assert len(ms) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            extract_minutiae(np.zeros((40, 40), bool), uniform((48, 40)))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        sk = rng.random((80, 80)) < 0.05
        f = uniform(sk.shape, 0.3)
        assert extract_minutiae(sk, f).to_text() == extract_minutiae(sk, f).to_text()


class TestMinutiaeSet:
    def test_sorted_and_unique(self):
        a = Minutia(5, 9, 10.0, TERMINATION)
        b = Minutia(7, 2, 20.0, BIFURCATION)
        ms = MinutiaeSet(20, 20, (a, b))
        assert list(ms) == [b, a]
        with pytest.raises(ParameterError):
            MinutiaeSet(20, 20, (a, Minutia(5, 9, 0.0, BIFURCATION)))

    def test_validation(self):
        with pytest.raises(ParameterError):
            Minutia(1, 1, 360.0, TERMINATION)
        with pytest.raises(ParameterError):
            Minutia(1, 1, 0.0, "core")
        with pytest.raises(ParameterError):
            MinutiaeSet(10, 10, (Minutia(10, 1, 0.0, TERMINATION),))

    def test_text_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        items = [
            Minutia(float(rng.uniform(0, 240)), float(rng.uniform(0, 310)),
                    float(rng.uniform(0, 360)), TERMINATION if i % 2 else BIFURCATION,
                    float(rng.random()))
            for i in range(25)
        ] + [Minutia(3, 4, 90.0, TERMINATION, 1.0)]
        ms = MinutiaeSet(310, 240, tuple(items))
        text = ms.to_text()
        assert text.splitlines()[0] == "MINUTIAE v1 310 240 26"
        back = MinutiaeSet.from_text(text)
        assert back == ms
        assert back.to_text() == text
        ms.write(tmp_path / "m.txt")
        assert MinutiaeSet.read(tmp_path / "m.txt") == ms

    def test_rigid_transform(self):
        rng = np.random.default_rng(1)
        items = [Minutia(float(x), float(y), float(t), TERMINATION)
                 for x, y, t in zip(rng.uniform(50, 150, 8), rng.uniform(50, 150, 8),
                                    rng.uniform(0, 360, 8))]
        ms = MinutiaeSet(200, 200, tuple(items))
        c = (100.0, 100.0)
        back = rigid_transform(rigid_transform(ms, 25, (0, 0), c), -25, (0, 0), c)
        np.testing.assert_allclose(back.xy(), ms.xy(), atol=1e-9)
        # +90 degrees (counter-clockwise, y up) sends east to north
        fwd = rigid_transform(ms, 90, (0, 0), c)
        m0 = ms[0]
        dx, dy = m0.x - 100, m0.y - 100
        moved = [m for m in fwd if abs(m.x - (100 + dy)) < 1e-9 and abs(m.y - (100 - dx)) < 1e-9]
        assert len(moved) == 1
        assert moved[0].theta == pytest.approx((m0.theta + 90) % 360)
        shifted = rigid_transform(ms, 0, (12, -7), c)
        np.testing.assert_allclose(shifted.xy(), ms.xy() + [12, -7])
