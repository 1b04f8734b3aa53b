"""Episode engine for the tag-search CPOMDP.

One episode: the agent starts on a ring of cells around the (hidden) tag,
observes an RSSI draw at every cell it occupies, and hops N/E/S/W/O until it
either dwells within the proximity radius for q consecutive steps (converged)
or exhausts the step budget.  Commanded actions are executed with probability
tau, otherwise a uniformly random action is executed instead.

Reward is computed from the true states and is for training only; policies
never see it at evaluation time.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EpisodeTerminated, ValidationError
from .grid import ACTIONS, RngStream, apply_action, reward
from .sites import RSSI_LOSS, SiteModel, expected_rssi, sample_rssi

# Episodes are rolled out lockstep in fixed-size groups so that results do
# not depend on the thread count (each episode owns its RNG streams).
ROLLOUT_CHUNK = 50


@dataclass
class EnvConfig:
    max_steps: int = 500
    tau: float = 1.0
    proximity_d_m: float = 100.0
    convergence_q: int = 4
    initial_distance_min_m: float = 200.0
    initial_distance_max_m: float = 2500.0

    def validate(self):
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValidationError("tau must be in [0, 1]")
        if self.convergence_q < 1:
            raise ValidationError("convergence_q must be >= 1")
        if self.proximity_d_m <= 0:
            raise ValidationError("proximity_d_m must be > 0")
        if self.initial_distance_min_m > self.initial_distance_max_m:
            raise ValidationError("initial distance range is inverted")


class EpisodeState:
    """Trajectory plus per-cell running RSSI means and visit counts.

    The running statistics live in growable dense arrays indexed
    [i - origin_i, j - origin_j]; the window views used by the feature
    extractor are plain slices of these arrays.
    """

    __slots__ = (
        "positions",
        "observations",
        "commanded",
        "executed",
        "rewards",
        "converged_at",
        "terminated",
        "_prox_run",
        "_origin",
        "_sum",
        "_cnt",
        "_g_obs",
        "_g_trans",
    )

    def __init__(self, u0, v0, margin=24):
        self.positions = [tuple(u0)]
        self.observations = [v0]
        self.commanded = []
        self.executed = []
        self.rewards = []
        self.converged_at = None
        self.terminated = False
        self._prox_run = 0
        side = 2 * margin + 1
        self._origin = (u0[0] - margin, u0[1] - margin)
        self._sum = np.zeros((side, side))
        self._cnt = np.zeros((side, side), dtype=np.int64)
        self._bump(u0, v0)
        self._g_obs = None
        self._g_trans = None

    # -- running statistics -------------------------------------------------

    def _grow_to(self, lo_i, lo_j, hi_i, hi_j):
        oi, oj = self._origin
        ni, nj = self._sum.shape
        pad_w = max(0, oi - lo_i)
        pad_s = max(0, oj - lo_j)
        pad_e = max(0, hi_i - (oi + ni - 1))
        pad_n = max(0, hi_j - (oj + nj - 1))
        if pad_w or pad_s or pad_e or pad_n:
            pad_w, pad_s = max(pad_w, 16 if pad_w else 0), max(pad_s, 16 if pad_s else 0)
            pad_e, pad_n = max(pad_e, 16 if pad_e else 0), max(pad_n, 16 if pad_n else 0)
            self._sum = np.pad(self._sum, ((pad_w, pad_e), (pad_s, pad_n)))
            self._cnt = np.pad(self._cnt, ((pad_w, pad_e), (pad_s, pad_n)))
            self._origin = (oi - pad_w, oj - pad_s)

    def _bump(self, u, v):
        self._grow_to(u[0], u[1], u[0], u[1])
        oi, oj = self._origin
        self._sum[u[0] - oi, u[1] - oj] += v
        self._cnt[u[0] - oi, u[1] - oj] += 1

    def stat_window(self, m):
        """(sum, count) views of the (2m+1)^2 window centered on the agent."""
        ci, cj = self.positions[-1]
        self._grow_to(ci - m, cj - m, ci + m, cj + m)
        oi, oj = self._origin
        si, sj = ci - m - oi, cj - m - oj
        size = 2 * m + 1
        return (
            self._sum[si : si + size, sj : sj + size],
            self._cnt[si : si + size, sj : sj + size],
        )

    def visit_count(self, u) -> int:
        oi, oj = self._origin
        i, j = u[0] - oi, u[1] - oj
        if 0 <= i < self._cnt.shape[0] and 0 <= j < self._cnt.shape[1]:
            return int(self._cnt[i, j])
        return 0

    def vbar(self, u) -> float:
        """Running mean of the RSSI samples collected at ``u`` (loss if unvisited)."""
        n = self.visit_count(u)
        if n == 0:
            return float(RSSI_LOSS)
        oi, oj = self._origin
        return float(self._sum[u[0] - oi, u[1] - oj]) / n

    # -- trajectory ----------------------------------------------------------

    @property
    def k(self) -> int:
        """Number of completed steps (= trajectory length)."""
        return len(self.rewards)

    @property
    def u(self):
        return self.positions[-1]

    @property
    def v(self):
        """Latest RSSI observation (at the current cell)."""
        return self.observations[-1]

    def _advance(self, commanded, executed, v_new, r):
        u_new = apply_action(self.positions[-1], executed)
        self.positions.append(u_new)
        self.observations.append(v_new)
        self.commanded.append(commanded)
        self.executed.append(executed)
        self.rewards.append(r)
        self._bump(u_new, v_new)
        return u_new


def feasible_ring(site: SiteModel, cfg: EnvConfig):
    """Cells of the site whose metric distance to the tag is inside the
    configured initial-distance range, in deterministic (i, j) order."""
    n = site.extent
    d = np.arange(-n, n + 1, dtype=np.float64)
    dist = np.hypot(d[:, None], d[None, :]) * site.grid_size_m
    ok = (dist >= cfg.initial_distance_min_m) & (dist <= cfg.initial_distance_max_m)
    di, dj = np.nonzero(ok)
    return [(site.tag[0] + int(a) - n, site.tag[1] + int(b) - n) for a, b in zip(di, dj)]


def reset(site: SiteModel, cfg: EnvConfig, rng: RngStream, u0=None) -> EpisodeState:
    """Start an episode: sample u0 on the feasible ring and draw v0 there.

    ``u0`` can be forced (multi-agent case study shares one start cell).
    """
    cfg.validate()
    if u0 is None:
        ring = feasible_ring(site, cfg)
        if not ring:
            raise ValidationError(
                "no cell of the site lies within the initial distance range "
                "[%g, %g] m" % (cfg.initial_distance_min_m, cfg.initial_distance_max_m)
            )
        g_init = rng.child("init").generator()
        u0 = ring[int(g_init.integers(len(ring)))]
    g_obs = rng.child("obs").generator()
    state = EpisodeState(u0, sample_rssi(site, u0, g_obs))
    state._g_obs = g_obs
    state._g_trans = rng.child("transition").generator()
    return state


def _proximity(site: SiteModel, cfg: EnvConfig, u) -> bool:
    s = (u[0] - site.tag[0], u[1] - site.tag[1])
    return float(np.hypot(s[0], s[1])) * site.grid_size_m < cfg.proximity_d_m


def step(state: EpisodeState, site: SiteModel, a_cmd: str, cfg: EnvConfig):
    """Execute one hop; returns (state, reward, executed action).

    The commanded action is executed with probability tau, otherwise an
    action drawn uniformly from all five replaces it.  The episode ends when
    the agent has stayed within proximity for q consecutive steps (converged)
    or the step budget runs out.
    """
    if state.terminated:
        raise EpisodeTerminated("episode already terminated at step %d" % state.k)
    if a_cmd not in ACTIONS:
        raise ValidationError("unknown action %r" % a_cmd)

    xi = state._g_trans.random()
    if xi < cfg.tau:
        executed = a_cmd
    else:
        executed = ACTIONS[int(state._g_trans.integers(len(ACTIONS)))]

    u_old = state.u
    s_old = (u_old[0] - site.tag[0], u_old[1] - site.tag[1])
    u_new = apply_action(u_old, executed)
    s_new = (u_new[0] - site.tag[0], u_new[1] - site.tag[1])
    r = reward(s_old, s_new)
    v_new = sample_rssi(site, u_new, state._g_obs)
    state._advance(a_cmd, executed, v_new, r)

    if _proximity(site, cfg, u_new):
        state._prox_run += 1
        if state._prox_run >= cfg.convergence_q and state.converged_at is None:
            state.converged_at = state.k - cfg.convergence_q + 1
            state.terminated = True
    else:
        state._prox_run = 0
    if state.k >= cfg.max_steps:
        state.terminated = True
    return state, r, executed


def teacher_replay(state: EpisodeState, site: SiteModel) -> EpisodeState:
    """Fluctuation-free twin of ``state``: same cells in the same order, every
    observation replaced by the cell's expected RSSI."""
    u0 = state.positions[0]
    twin = EpisodeState(u0, expected_rssi(site, u0))
    for t in range(state.k):
        executed = state.executed[t]
        u_new = apply_action(twin.positions[-1], executed)
        twin._advance(state.commanded[t], executed, expected_rssi(site, u_new), state.rewards[t])
    twin.converged_at = state.converged_at
    twin.terminated = state.terminated
    return twin


def replay_cursor(positions, observations):
    """Iterate an episode's history, yielding the partially rebuilt state
    after each observation (used to recompute per-step features exactly)."""
    state = EpisodeState(positions[0], observations[0])
    yield state
    for t in range(1, len(positions)):
        state.positions.append(tuple(positions[t]))
        state.observations.append(observations[t])
        state._bump(positions[t], observations[t])
        yield state


def write_episode_log(state: EpisodeState, site: SiteModel, fh):
    """CSV log with header k,i,j,rssi,action,reward,executed."""
    w = csv.writer(fh)
    w.writerow(["k", "i", "j", "rssi", "action", "reward", "executed"])
    for t, (u, v) in enumerate(zip(state.positions, state.observations)):
        if t < state.k:
            w.writerow([t, u[0], u[1], v, state.commanded[t], state.rewards[t], state.executed[t]])
        else:
            w.writerow([t, u[0], u[1], v, "", "", ""])


# -- batched rollouts ---------------------------------------------------------


def _rollout_chunk(site, cfg, policy, episode_ids, stream, u0=None):
    n = len(episode_ids)
    states, rngs = [], []
    for eid in episode_ids:
        ep = stream.child(eid)
        states.append(reset(site, cfg, ep, u0=u0))
        rngs.append(ep.child("policy").generator())
    ctxs = policy.begin(n)
    active = list(range(n))
    while active:
        acts = policy.decide(
            [states[i] for i in active], [ctxs[i] for i in active], [rngs[i] for i in active]
        )
        done = set()
        for i, a in zip(active, acts):
            step(states[i], site, a, cfg)
            if states[i].terminated:
                done.add(i)
        if done:
            active = [i for i in active if i not in done]
    return states


def rollout_episodes(site, cfg, policy, n, stream: RngStream, offset=0, threads=1, u0=None):
    """Run ``n`` independent episodes of ``policy`` and return their states.

    Episode RNG streams are keyed by ``offset + index``, and episodes are
    processed in fixed-size chunks, so results are identical for any
    ``threads`` setting and across runs.
    """
    ids = list(range(offset, offset + n))
    chunks = [ids[i : i + ROLLOUT_CHUNK] for i in range(0, n, ROLLOUT_CHUNK)]
    if threads <= 1 or len(chunks) == 1:
        out = [_rollout_chunk(site, cfg, policy, c, stream, u0) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(_rollout_chunk, site, cfg, policy, c, stream, u0) for c in chunks]
            out = [f.result() for f in futs]
    return [s for group in out for s in group]
