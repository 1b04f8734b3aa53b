import numpy as np
import pytest

from loracompass.grid import (
    ACTIONS,
    DISPLACEMENT,
    OPPOSITE,
    RngStream,
    apply_action,
    optimal_action_distribution,
    optimal_action_vector,
    reward,
)


class TestApplyAction:
    def test_displacement_table(self):
        assert apply_action((0, 0), "N") == (0, 1)
        assert apply_action((-1, 5), "W") == (-2, 5)
        assert apply_action((2, 2), "E") == (3, 2)
        assert apply_action((2, 2), "S") == (2, 1)

    def test_stop_is_identity(self):
        assert apply_action((3, -2), "O") == (3, -2)

    def test_opposite_roundtrip(self):
        for a in ACTIONS:
            for u in [(0, 0), (5, -3), (-7, 11)]:
                assert apply_action(apply_action(u, a), OPPOSITE[a]) == u


class TestReward:
    def test_closer_is_positive(self):
        assert reward((2, 1), (1, 1)) == 1

    def test_staying_on_tag_is_positive(self):
        assert reward((0, 0), (0, 0)) == 1

    def test_farther_is_negative(self):
        assert reward((1, 0), (1, 1)) == -1

    def test_stop_away_from_tag_is_negative(self):
        assert reward((4, 2), (4, 2)) == -1


class TestOptimalActionDistribution:
    def test_two_reducing_moves(self):
        assert optimal_action_distribution((2, 1)) == {"S": 0.5, "W": 0.5}

    def test_single_reducing_move(self):
        assert optimal_action_distribution((0, 3)) == {"S": 1.0}

    def test_stop_at_tag(self):
        assert optimal_action_distribution((0, 0)) == {"O": 1.0}

    def test_sums_to_one_and_no_mass_on_bad_actions(self):
        for i in range(-6, 7):
            for j in range(-6, 7):
                dist = optimal_action_distribution((i, j))
                assert np.isclose(sum(dist.values()), 1.0)
                for a, p in dist.items():
                    di, dj = DISPLACEMENT[a]
                    assert reward((i, j), (i + di, j + dj)) == 1
                    assert p > 0

    def test_vector_layout(self):
        v = optimal_action_vector((2, 1))
        assert v[ACTIONS.index("S")] == 0.5
        assert v[ACTIONS.index("W")] == 0.5
        assert v.sum() == 1.0


def test_l1_l2_reward_sets_agree_exhaustively():
    # Unit axis moves change both norms in the same direction.
    for i in range(-25, 26):
        for j in range(-25, 26):
            if i == 0 and j == 0:
                continue
            l2 = set()
            l1 = set()
            for a in ACTIONS:
                di, dj = DISPLACEMENT[a]
                ni, nj = i + di, j + dj
                if ni * ni + nj * nj < i * i + j * j or (ni == 0 and nj == 0):
                    l2.add(a)
                if abs(ni) + abs(nj) < abs(i) + abs(j) or (ni == 0 and nj == 0):
                    l1.add(a)
            assert l1 == l2, (i, j)


class TestRngStream:
    def test_identical_keys_reproduce(self):
        a = RngStream(42).child("obs", 7).generator().random(8)
        b = RngStream(42).child("obs", 7).generator().random(8)
        np.testing.assert_array_equal(a, b)

    def test_children_are_distinct(self):
        root = RngStream(42)
        a = root.child("obs", 0).generator().random(16)
        b = root.child("obs", 1).generator().random(16)
        c = root.child("transition", 0).generator().random(16)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_changes_stream(self):
        a = RngStream(1).child(3).generator().random(4)
        b = RngStream(2).child(3).generator().random(4)
        assert not np.array_equal(a, b)

    def test_string_and_int_keys_mix(self):
        s = RngStream(0).child("episode", 12, "obs")
        t = RngStream(0).child("episode", 12, "obs")
        assert s == t
        np.testing.assert_array_equal(s.generator().random(4), t.generator().random(4))
