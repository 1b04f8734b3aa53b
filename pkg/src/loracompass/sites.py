"""Per-cell RSSI histograms realizing the observation function of one site.

A site is a square of grid cells centered on the tag.  Each cell holds a
histogram of integer RSSI samples in [-120, -30] dBm; -120 doubles as the
signal-loss value, so one mechanism covers both weak signal and no signal.
Sites are generated synthetically (log-distance path loss plus a spatially
correlated shadowing field), or ingested from (i, j, rssi) sample logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .grid import RngStream

RSSI_MIN = -120
RSSI_MAX = -30
RSSI_LOSS = -120
N_BINS = RSSI_MAX - RSSI_MIN + 1  # 91 integer dBm bins
BIN_VALUES = np.arange(RSSI_MIN, RSSI_MAX + 1, dtype=np.float64)


@dataclass(frozen=True)
class SiteGenParams:
    """Knobs of the synthetic site generator.

    The mean RSSI at metric distance d from the tag follows a log-distance
    path-loss law, mu(d) = base_power_dbm
    - 10 * path_loss_exponent * log10(max(d, d_ref) / d_ref) + S(u),
    where S is a frozen, spatially correlated Gaussian shadowing field.
    Per-sample noise and a distance-growing loss probability are applied on
    top of the mean when the histograms are filled.
    """

    base_power_dbm: float = -40.0
    path_loss_exponent: float = 2.7
    # Below one cell width so the tag cell is the strict maximum of the field.
    reference_distance_m: float = 50.0
    shadowing_sigma_db: float = 4.0
    shadowing_correlation_cells: float = 3.0
    sample_noise_sigma_db: float = 6.0
    loss_prob_at_far_edge: float = 0.3
    samples_per_cell: int = 50
    extent: int = 25
    grid_size_m: float = 100.0
    seed: int = 0

    def validate(self):
        if self.extent < 0:
            raise ValidationError("extent excludes the tag cell: %d" % self.extent)
        for name in ("shadowing_sigma_db", "sample_noise_sigma_db"):
            if getattr(self, name) < 0:
                raise ValidationError("%s must be >= 0" % name)
        if not 0.0 <= self.loss_prob_at_far_edge <= 1.0:
            raise ValidationError("loss_prob_at_far_edge must be in [0, 1]")
        if self.samples_per_cell < 1:
            raise ValidationError("samples_per_cell must be >= 1")
        if self.reference_distance_m <= 0:
            raise ValidationError("reference_distance_m must be > 0")
        if self.grid_size_m <= 0:
            raise ValidationError("grid_size_m must be > 0")
        if self.shadowing_correlation_cells < 0:
            raise ValidationError("shadowing_correlation_cells must be >= 0")


class SiteModel:
    """Histograms for every cell of a square region centered on the tag.

    ``counts`` is a dense (side*side, 91) array of per-bin sample counts,
    flattened row-major over window offsets (di, dj) in [-extent, extent].
    """

    def __init__(self, tag, extent, grid_size_m, counts):
        self.tag = (int(tag[0]), int(tag[1]))
        self.extent = int(extent)
        self.grid_size_m = float(grid_size_m)
        side = 2 * self.extent + 1
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (side * side, N_BINS):
            raise ValidationError(
                "counts shape %s does not match extent %d" % (counts.shape, extent)
            )
        if np.any(counts < 0):
            raise ValidationError("negative histogram count")
        # Cells with no samples take the pure-loss histogram {-120: 1}.
        totals = counts.sum(axis=1)
        empty = totals == 0
        if np.any(empty):
            counts = counts.copy()
            counts[empty, 0] = 1
            totals = counts.sum(axis=1)
        self.counts = counts
        self._totals = totals.astype(np.float64)
        self._means = (counts @ BIN_VALUES) / self._totals
        self._cum = np.cumsum(counts, axis=1, dtype=np.float64)
        self._cum /= self._cum[:, -1:]
        self.side = side

    @property
    def tag_reference_rssi(self) -> float:
        """Mean RSSI of the tag cell; the deployment reference v(c)."""
        return float(self._means[self.cell_index(self.tag)])

    def contains(self, u) -> bool:
        return (
            abs(u[0] - self.tag[0]) <= self.extent
            and abs(u[1] - self.tag[1]) <= self.extent
        )

    def cell_index(self, u) -> int:
        di = u[0] - self.tag[0] + self.extent
        dj = u[1] - self.tag[1] + self.extent
        return di * self.side + dj

    def cells(self):
        """All absolute cell coordinates in deterministic (i, j) order."""
        t_i, t_j = self.tag
        n = self.extent
        for di in range(-n, n + 1):
            for dj in range(-n, n + 1):
                yield (t_i + di, t_j + dj)

    def histogram(self, u) -> dict:
        """Counts for one cell as {rssi: count}, loss histogram outside the extent."""
        if not self.contains(u):
            return {RSSI_LOSS: 1}
        row = self.counts[self.cell_index(u)]
        nz = np.nonzero(row)[0]
        return {int(RSSI_MIN + b): int(row[b]) for b in nz}

    def mean_map(self) -> np.ndarray:
        """Expected RSSI per cell as a (side, side) array indexed [di, dj]."""
        return self._means.reshape(self.side, self.side)


def expected_rssi(site: SiteModel, u) -> float:
    """Histogram mean at ``u``; the loss value outside the site."""
    if not site.contains(u):
        return float(RSSI_LOSS)
    return float(site._means[site.cell_index(u)])


def sample_rssi(site: SiteModel, u, rng: np.random.Generator) -> int:
    """Draw one RSSI observation at ``u`` per the cell's normalized histogram."""
    if not site.contains(u):
        return RSSI_LOSS
    r = rng.random()
    b = int(np.searchsorted(site._cum[site.cell_index(u)], r, side="right"))
    return RSSI_MIN + min(b, N_BINS - 1)


def generate_site(params: SiteGenParams, tag=(0, 0)) -> SiteModel:
    """Build a synthetic site around ``tag`` from the path-loss law in ``params``.

    The shadowing field is drawn once per site (domain shift across sites);
    per-sample noise and loss are drawn per observation slot (fluctuation
    within a site).  Identical params produce bit-identical sites.
    """
    params.validate()
    n = params.extent
    side = 2 * n + 1
    root = RngStream(params.seed).child("site")

    di = np.arange(-n, n + 1, dtype=np.float64)
    dist = np.hypot(di[:, None], di[None, :]) * params.grid_size_m  # [di, dj]
    d_eff = np.maximum(dist, params.reference_distance_m)
    mu = params.base_power_dbm - 10.0 * params.path_loss_exponent * np.log10(
        d_eff / params.reference_distance_m
    )

    if params.shadowing_sigma_db > 0:
        white = root.child("shadowing").generator().standard_normal((side, side))
        smooth = ndimage.gaussian_filter(
            white, sigma=params.shadowing_correlation_cells, mode="reflect"
        )
        sd = smooth.std()
        if sd > 0:
            mu = mu + smooth * (params.shadowing_sigma_db / sd)

    k = params.samples_per_cell
    draws = mu.reshape(-1, 1) + params.sample_noise_sigma_db * root.child(
        "samples"
    ).generator().standard_normal((side * side, k))
    draws = np.clip(np.rint(draws), RSSI_MIN + 1, RSSI_MAX)

    if params.loss_prob_at_far_edge > 0:
        d_max = max(n, 1) * params.grid_size_m
        p_loss = np.clip(params.loss_prob_at_far_edge * dist / d_max, 0.0, 1.0)
        lost = root.child("loss").generator().random((side * side, k)) < p_loss.reshape(-1, 1)
        draws = np.where(lost, float(RSSI_LOSS), draws)

    bins = (draws - RSSI_MIN).astype(np.int64)
    counts = np.zeros((side * side, N_BINS), dtype=np.int64)
    flat = bins + (np.arange(side * side)[:, None] * N_BINS)
    np.add.at(counts.reshape(-1), flat.reshape(-1), 1)
    return SiteModel(tag, n, params.grid_size_m, counts)


def ingest_samples(rows, tag, extent=None, grid_size_m=100.0) -> SiteModel:
    """Accumulate (i, j, rssi) sample rows into per-cell histograms.

    The tag coordinate is supplied separately (it is not derivable from the
    samples).  When ``extent`` is None it is taken as the largest Chebyshev
    distance of any row from the tag.  Cells without samples become
    pure-loss histograms.
    """
    parsed = []
    for idx, row in enumerate(rows):
        try:
            i, j, rssi = int(row[0]), int(row[1]), row[2]
        except (TypeError, ValueError, IndexError):
            raise ValidationError("malformed sample at row %d: %r" % (idx, row))
        r = float(rssi)
        if r != int(r) or not RSSI_MIN <= int(r) <= RSSI_MAX:
            raise ValidationError(
                "RSSI out of range [-120, -30] at row %d: %r" % (idx, rssi)
            )
        parsed.append((i, j, int(r)))

    if extent is None:
        extent = max(
            (max(abs(i - tag[0]), abs(j - tag[1])) for i, j, _ in parsed), default=0
        )
    side = 2 * extent + 1
    counts = np.zeros((side * side, N_BINS), dtype=np.int64)
    for idx, (i, j, r) in enumerate(parsed):
        di, dj = i - tag[0], j - tag[1]
        if abs(di) > extent or abs(dj) > extent:
            raise ValidationError(
                "sample outside extent %d at row %d: (%d, %d)" % (extent, idx, i, j)
            )
        counts[(di + extent) * side + (dj + extent), r - RSSI_MIN] += 1
    return SiteModel(tag, extent, grid_size_m, counts)


def noise_free(site: SiteModel) -> SiteModel:
    """Site whose every cell holds a point mass at the rounded expected RSSI."""
    rounded = np.clip(np.rint(site._means), RSSI_MIN, RSSI_MAX).astype(np.int64)
    counts = np.zeros_like(site.counts)
    counts[np.arange(counts.shape[0]), rounded - RSSI_MIN] = 1
    return SiteModel(site.tag, site.extent, site.grid_size_m, counts)


def to_json_dict(site: SiteModel) -> dict:
    cells = []
    for u in site.cells():
        hist = site.histogram(u)
        cells.append(
            {"u": [u[0], u[1]], "hist": {str(v): c for v, c in sorted(hist.items())}}
        )
    return {
        "tag": [site.tag[0], site.tag[1]],
        "extent": site.extent,
        "grid_size_m": site.grid_size_m,
        "cells": cells,
    }


def from_json_dict(doc: dict) -> SiteModel:
    try:
        tag = (int(doc["tag"][0]), int(doc["tag"][1]))
        extent = int(doc["extent"])
        grid_size_m = float(doc["grid_size_m"])
        cell_docs = doc["cells"]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ValidationError("malformed site document: %s" % exc)
    side = 2 * extent + 1
    counts = np.zeros((side * side, N_BINS), dtype=np.int64)
    for cell in cell_docs:
        i, j = int(cell["u"][0]), int(cell["u"][1])
        di, dj = i - tag[0], j - tag[1]
        if abs(di) > extent or abs(dj) > extent:
            raise ValidationError("cell (%d, %d) outside extent %d" % (i, j, extent))
        for key, cnt in cell["hist"].items():
            v = int(key)
            if not RSSI_MIN <= v <= RSSI_MAX:
                raise ValidationError("histogram key out of range: %s" % key)
            if int(cnt) < 0:
                raise ValidationError("negative count for key %s" % key)
            counts[(di + extent) * side + (dj + extent), v - RSSI_MIN] += int(cnt)
    return SiteModel(tag, extent, grid_size_m, counts)


def save_site(site: SiteModel, path):
    with open(path, "w") as fh:
        json.dump(to_json_dict(site), fh, indent=1)
        fh.write("\n")


def load_site(path) -> SiteModel:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
