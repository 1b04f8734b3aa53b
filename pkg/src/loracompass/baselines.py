"""Reference searchers the learned policy is compared against.

All of them plug into the same episode loop as the network policy (pure
functions of the episode state plus their own controller state), so metric
comparisons share identical machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import ACTIONS
from .policy import EpisodePolicy
from .sites import RSSI_LOSS, SiteModel

_SPIRAL_DIRS = ("E", "N", "W", "S")


def spiral_action(k: int) -> str:
    """k-th action of the outward square spiral E, N, W, W, S, S, E, E, E, ...

    Run r (0-based) has length r // 2 + 1 and direction cycling E, N, W, S.
    """
    r = 0
    while k >= r // 2 + 1:
        k -= r // 2 + 1
        r += 1
    return _SPIRAL_DIRS[r % 4]


def spiral_policy(state) -> str:
    """Deterministic exhaustive-coverage searcher; ignores all observations."""
    return spiral_action(state.k)


class SpiralSearcher(EpisodePolicy):
    """Spiral sweep; optionally latches to O once the observed RSSI reaches
    ``stop_rssi`` (the tag-cell reference), which lets the sweep terminate."""

    def __init__(self, stop_rssi=None):
        self.stop_rssi = stop_rssi

    def make_controller(self):
        return {"stopped": False}

    def decide_one(self, state, ctx, rng):
        if ctx["stopped"]:
            return "O"
        if self.stop_rssi is not None and state.v >= self.stop_rssi:
            ctx["stopped"] = True
            return "O"
        return spiral_policy(state)


def _hop_toward(u, target) -> str:
    """One L1-reducing hop toward target; larger axis gap first, i before j."""
    di = target[0] - u[0]
    dj = target[1] - u[1]
    if di == 0 and dj == 0:
        return "O"
    if abs(di) >= abs(dj) and di != 0:
        return "E" if di > 0 else "W"
    return "N" if dj > 0 else "S"


@dataclass
class RangingModel:
    """Log-distance model v = p0 - 10 * n * log10(d / d_ref) fitted on a site."""

    p0_dbm: float
    exponent: float
    reference_distance_m: float


def fit_ranging_model(site: SiteModel) -> RangingModel:
    """Least squares in log-distance over cells with any non-loss sample."""
    d_ref = site.grid_size_m
    n = site.extent
    off = np.arange(-n, n + 1, dtype=np.float64)
    dist = np.hypot(off[:, None], off[None, :]).reshape(-1) * site.grid_size_m
    means = site.mean_map().reshape(-1)
    keep = means > RSSI_LOSS + 1e-9
    x = np.log10(np.maximum(dist[keep], d_ref) / d_ref)
    design = np.stack([np.ones(x.size), -10.0 * x], axis=1)
    coef, *_ = np.linalg.lstsq(design, means[keep], rcond=None)
    return RangingModel(float(coef[0]), float(coef[1]), d_ref)


class RangingSearcher(EpisodePolicy):
    """Estimate the tag by inverting the ranging model at every visited cell,
    then hop toward the least-squares cell; spiral until 3 cells have signal.

    The candidate set is the site's cell lattice (coordinates only; the
    searcher never reads the tag location).
    """

    def __init__(self, model: RangingModel, site: SiteModel):
        self.model = model
        self.grid_size_m = site.grid_size_m
        self.candidates = np.array(list(site.cells()), dtype=np.float64)

    def decide_one(self, state, ctx, rng):
        cells, vbars = [], []
        seen = set()
        for u in state.positions:
            if u not in seen:
                seen.add(u)
                vb = state.vbar(u)
                if vb > RSSI_LOSS:
                    cells.append(u)
                    vbars.append(vb)
        if len(cells) < 3 or self.model.exponent <= 0:
            return spiral_policy(state)
        vbars = np.array(vbars)
        d_hat = self.model.reference_distance_m * 10.0 ** (
            (self.model.p0_dbm - vbars) / (10.0 * self.model.exponent)
        )
        pts = np.array(cells, dtype=np.float64)
        d = np.hypot(
            self.candidates[:, None, 0] - pts[None, :, 0],
            self.candidates[:, None, 1] - pts[None, :, 1],
        ) * self.grid_size_m
        cost = np.sum((d - d_hat) ** 2, axis=1)
        c_hat = self.candidates[int(np.argmin(cost))]
        return _hop_toward(state.u, (int(c_hat[0]), int(c_hat[1])))


def _round_cell(p):
    return (int(np.floor(p[0] + 0.5)), int(np.floor(p[1] + 0.5)))


def _degenerate(cells):
    if len(set(cells)) < 3:
        return True
    (x0, y0), (x1, y1), (x2, y2) = cells
    return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) == 0


class _SimplexMachine:
    """Nelder-Mead on the grid, maximizing the sampled mean RSSI.

    Standard coefficients (reflect 1, expand 2, contract 0.5, shrink 0.5),
    candidate vertices rounded to cells, degenerate simplices reseeded from
    the current cell's E/N neighbors.  The agent walks hop by hop to each
    vertex to sample it.  When three consecutive iterations fail to improve
    the best score, the machine walks back to the best vertex and stops;
    without some stop rule the walker could never dwell anywhere.
    """

    STALL_LIMIT = 3

    def __init__(self, anneal_a0=None):
        self.a0 = anneal_a0
        self.t = 1
        self.vertices = []  # [cell, ...] with scores in self.scores
        self.scores = {}
        self.queue = []  # cells still to visit and score
        self.phase = "init"
        self.target = None
        self.pending = None  # context of the in-flight reflect/expand/contract
        self.stall = 0
        self.best_seen = -np.inf
        self.best_cell = None
        self.stopped = False
        self.go_home = False

    def _scale(self):
        if self.a0 is None:
            return 1.0
        return max(self.a0 / self.t, 1.0)

    def _order(self):
        self.vertices.sort(key=lambda c: (-self.scores[c], c))

    def _note_progress(self):
        """Track the best score; too many iterations without improvement sends
        the walker back to the best cell seen, where it stops."""
        top = max(self.vertices, key=lambda c: (self.scores[c], c))
        if self.scores[top] > self.best_seen + 1e-12:
            self.best_seen = self.scores[top]
            self.best_cell = top
            self.stall = 0
            return False
        self.stall += 1
        if self.stall >= self.STALL_LIMIT:
            self.go_home = True
            self.target = self.best_cell
            return True
        return False

    def _start_iteration(self, state):
        if self._note_progress():
            return
        if _degenerate(self.vertices):
            self._reseed(state)
            return
        self._order()
        b, s, w = self.vertices
        c = ((b[0] + s[0]) / 2.0, (b[1] + s[1]) / 2.0)
        scale = self._scale()
        xr = _round_cell((c[0] + scale * (c[0] - w[0]), c[1] + scale * (c[1] - w[1])))
        if xr in self.vertices:
            self._reseed(state)
            return
        self.pending = {"op": "reflect", "c": c, "w": w, "scale": scale, "xr": xr}
        self.target = xr

    def _reseed(self, state):
        u = state.u
        self.vertices = [u]
        self.scores[u] = state.vbar(u)
        self.queue = [(u[0] + 1, u[1]), (u[0], u[1] + 1)]
        self.phase = "seeding"
        self.target = self.queue.pop(0)
        self.pending = None
        self.t += 1

    def _finish_iteration(self):
        self.t += 1
        self.pending = None
        self.target = None

    def arrived(self, state):
        """Score the target cell and advance the machine one transition."""
        cell = state.u
        self.scores[cell] = state.vbar(cell)
        if self.go_home:
            self.stopped = True
            return
        if self.phase == "init":
            if cell not in self.vertices:
                self.vertices.append(cell)
            if len(self.vertices) == 3:
                self.phase = "search"
                self.target = None
            else:
                nxt = self.queue.pop(0)
                self.target = nxt
            return
        if self.phase == "seeding":
            self.vertices.append(cell)
            if self.queue:
                self.target = self.queue.pop(0)
            else:
                self.phase = "search"
                self.target = None
            return

        op = self.pending
        if op is None:
            self.target = None
            return
        b, s, w = self.vertices
        f = self.scores
        if op["op"] == "reflect":
            xr = op["xr"]
            if f[xr] > f[b]:
                c, scale = op["c"], op["scale"]
                xe = _round_cell(
                    (c[0] + 2.0 * scale * (c[0] - w[0]), c[1] + 2.0 * scale * (c[1] - w[1]))
                )
                if xe == xr or xe in self.vertices:
                    self.vertices[2] = xr
                    self._finish_iteration()
                else:
                    op["op"] = "expand"
                    op["xr_score"] = f[xr]
                    op["xe"] = xe
                    self.target = xe
                return
            if f[xr] > f[s]:
                self.vertices[2] = xr
                self._finish_iteration()
                return
            xc = _round_cell(
                (op["c"][0] + 0.5 * (w[0] - op["c"][0]), op["c"][1] + 0.5 * (w[1] - op["c"][1]))
            )
            if xc == w or xc in self.vertices:
                self._shrink(b, s, w)
                return
            op["op"] = "contract"
            op["xc"] = xc
            self.target = xc
            return
        if op["op"] == "expand":
            xe, xr = op["xe"], op["xr"]
            self.vertices[2] = xe if f[xe] > op["xr_score"] else xr
            self._finish_iteration()
            return
        if op["op"] == "contract":
            xc = op["xc"]
            if f[xc] > f[w]:
                self.vertices[2] = xc
                self._finish_iteration()
            else:
                self._shrink(b, s, w)
            return
        if op["op"] == "shrink":
            self.vertices = [b, op["s2"], op["w2"]]
            if self.queue:
                self.target = self.queue.pop(0)
                return
            self._finish_iteration()
            return

    def _shrink(self, b, s, w):
        s2 = _round_cell((b[0] + 0.5 * (s[0] - b[0]), b[1] + 0.5 * (s[1] - b[1])))
        w2 = _round_cell((b[0] + 0.5 * (w[0] - b[0]), b[1] + 0.5 * (w[1] - b[1])))
        self.pending = {"op": "shrink", "s2": s2, "w2": w2}
        self.queue = [] if s2 == w2 else [w2]
        self.target = s2


class SimplexSearcher(EpisodePolicy):
    """Nelder-Mead walker; with ``anneal_a0`` set it becomes the Robbins-Monro
    variant (reflection/expansion displacements scaled by max(a0 / t, 1) and
    vertices re-scored by the running mean over repeat visits)."""

    def __init__(self, anneal_a0=None):
        self.anneal_a0 = anneal_a0

    def make_controller(self):
        return _SimplexMachine(self.anneal_a0)

    def decide_one(self, state, ctx, rng):
        mc = ctx
        if mc.stopped:
            return "O"
        if mc.phase == "init" and not mc.vertices and mc.target is None:
            u = state.u
            mc.vertices = [u]
            mc.scores[u] = state.vbar(u)
            mc.queue = [(u[0] + 1, u[1]), (u[0], u[1] + 1)]
            mc.target = mc.queue.pop(0)
        for _ in range(8):  # resolve zero-walk transitions in place
            if mc.target is None:
                mc._start_iteration(state)
                if mc.stopped:
                    return "O"
                if mc.target is None:
                    continue
            if state.u == mc.target:
                mc.arrived(state)
                if mc.stopped:
                    return "O"
            else:
                return _hop_toward(state.u, mc.target)
        return "O"


def robbins_monro_searcher(a0=4.0) -> SimplexSearcher:
    return SimplexSearcher(anneal_a0=a0)


def alt_exploration(strategy, probs, rng, eps=0.1) -> str:
    """Pick an action from a probability vector: greedy, eps_greedy, or sampling."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (5,) or not np.isclose(probs.sum(), 1.0, atol=1e-6):
        raise ValidationError("probs must be a length-5 distribution")
    if strategy == "greedy":
        return ACTIONS[int(np.argmax(probs))]
    if strategy == "eps_greedy":
        if rng.random() < eps:
            return ACTIONS[int(rng.integers(len(ACTIONS)))]
        return ACTIONS[int(np.argmax(probs))]
    if strategy == "sampling":
        return ACTIONS[int(rng.choice(len(ACTIONS), p=probs / probs.sum()))]
    raise ValidationError("unknown strategy %r" % strategy)


class OraclePolicy(EpisodePolicy):
    """Ground-truth reference: argmax of the optimal action distribution.

    Reads the tag location, so it is only meaningful as a test yardstick.
    """

    def __init__(self, tag):
        self.tag = tag

    def decide_one(self, state, ctx, rng):
        from .grid import optimal_action_vector

        s = (state.u[0] - self.tag[0], state.u[1] - self.tag[1])
        return ACTIONS[int(np.argmax(optimal_action_vector(s)))]
