"""Agent-centered feature maps: signal, variation, and visibility.

The three channels are (2m+1)x(2m+1) windows indexed [m+di, m+dj] for world
offsets (di, dj) from the agent:

* signal:     running mean RSSI per cell, -120 where never visited
* variation:  signal minus the agent cell's mean (0 exactly at the center)
* visibility: 1 where visited at least once, else 0

Raw visit counts are kept alongside for the exploration bonus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sites import RSSI_LOSS

# RSSI range [-120, -30] maps to the unit interval with these constants.
NORM_SHIFT = 120.0
NORM_SCALE = 90.0

CHANNELS = ("s", "v", "b")


@dataclass
class FeatureMaps:
    m: int
    signal: np.ndarray
    variation: np.ndarray
    visibility: np.ndarray
    visit_counts: np.ndarray


def extract(state, m: int) -> FeatureMaps:
    """Build the feature maps from an episode's running statistics."""
    if m < 1:
        raise ValidationError("map half-width m must be >= 1")
    if not state.observations:
        raise ValidationError("episode has no observations")
    total, cnt = state.stat_window(m)
    visited = cnt > 0
    signal = np.where(visited, total / np.maximum(cnt, 1), float(RSSI_LOSS))
    variation = signal - signal[m, m]
    return FeatureMaps(
        m=m,
        signal=signal,
        variation=variation,
        visibility=visited.astype(np.float64),
        visit_counts=cnt.astype(np.int64),
    )


def normalize_for_model(maps: FeatureMaps, drop=()) -> np.ndarray:
    """Stack the channels as a 3x(2m+1)x(2m+1) array scaled for the network.

    Channel order is fixed (signal, variation, visibility); ``drop`` names
    channels to zero out for ablation runs, e.g. drop=("s",).
    """
    for name in drop:
        if name not in CHANNELS:
            raise ValidationError("unknown channel %r (use s, v, b)" % name)
    out = np.stack(
        [
            (maps.signal + NORM_SHIFT) / NORM_SCALE,
            maps.variation / NORM_SCALE,
            maps.visibility,
        ]
    )
    for name in drop:
        out[CHANNELS.index(name)] = 0.0
    return out
