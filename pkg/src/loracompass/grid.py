"""Grid geometry, hop actions, reward, and the seeded randomness contract.

Coordinates are pairs of exact integers (i, j): i grows west to east,
j grows south to north.  The search state is the integer vector from the
tag to the agent, s = u - c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIONS = ("N", "E", "S", "W", "O")
ACTION_INDEX = {a: k for k, a in enumerate(ACTIONS)}

# Fixed displacement table; O is "stop" (stay in place).
DISPLACEMENT = {
    "N": (0, 1),
    "E": (1, 0),
    "S": (0, -1),
    "W": (-1, 0),
    "O": (0, 0),
}

OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E", "O": "O"}


def apply_action(u, action):
    """Return the grid cell reached from ``u`` by one hop ``action``."""
    di, dj = DISPLACEMENT[action]
    return (u[0] + di, u[1] + dj)


def reward(s, s_next):
    """+1 if the hop moved the agent closer to the tag (or kept it on it), else -1.

    Distances compare exactly via squared L2 norms, so no float rounding
    can flip the sign.
    """
    d_now = s[0] * s[0] + s[1] * s[1]
    d_next = s_next[0] * s_next[0] + s_next[1] * s_next[1]
    if d_next < d_now or d_next == 0:
        return 1
    return -1


def optimal_action_distribution(s):
    """Uniform distribution over the hops earning +1 reward from state ``s``.

    At s == (0, 0) the only rewarded action is O (stay on the tag).
    """
    good = [a for a in ACTIONS if reward(s, (s[0] + DISPLACEMENT[a][0], s[1] + DISPLACEMENT[a][1])) == 1]
    p = 1.0 / len(good)
    return {a: p for a in good}


def optimal_action_vector(s):
    """Same as :func:`optimal_action_distribution` but as a length-5 array."""
    dist = optimal_action_distribution(s)
    out = np.zeros(5)
    for a, p in dist.items():
        out[ACTION_INDEX[a]] = p
    return out


def _key_to_int(key):
    if isinstance(key, str):
        return int.from_bytes(key.encode("utf8"), "little")
    return int(key)


@dataclass(frozen=True)
class RngStream:
    """Counter-based, splittable random stream.

    Identical (seed, stream id) pairs reproduce identical draw sequences on
    any platform; child streams derived for distinct keys (episode index,
    purpose tag, ...) are statistically independent.
    """

    seed: int
    stream: tuple = ()

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(_key_to_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))
