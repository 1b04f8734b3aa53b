"""The decision maker and its trainer.

Action selection combines the exploitation distribution (network output) with
a closed-form exploration bonus per action,

    g(a) = beta * tanh(alpha * dv / 2) * (1/sqrt(n_a) - 1/sqrt(n_a + 1)),

where dv is the gap between the reference RSSI measured at the tag and the
current observation, and n_a counts prior visits to the cell the action leads
to, plus one.  The executed hop is the argmax of exploit + explore.

Training is on-policy: batches of episodes are rolled out with the deployed
selection rule, then one Adam update applies the combined loss
L_PG + omega1 * L_PD + omega2 * L_SL (policy gradient, distillation against a
fluctuation-free teacher replay, and a supervised auxiliary head).
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass

import numpy as np

from . import nnet
from .env import EpisodeState, replay_cursor, rollout_episodes
from .errors import NumericalError, ValidationError
from .features import extract, normalize_for_model
from .grid import ACTION_INDEX, ACTIONS, DISPLACEMENT, RngStream, optimal_action_vector
from .sites import SiteModel, expected_rssi

GRAD_CHUNK = 256
# Probability floor for the penalty side of the PG loss (see _gradient_pass).
PG_PROB_FLOOR = 1e-3


@dataclass
class ExploreParams:
    reference_rssi: float
    beta: float = 8.0
    alpha: float = 0.5

    def validate(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")


@dataclass
class LossWeights:
    omega1: float = 1.5
    omega2: float = 1.0

    def validate(self):
        if self.omega1 < 0 or self.omega2 < 0:
            raise ValidationError("loss weights must be >= 0")


def confidence_weight(dv, alpha):
    """(e^(a*dv) - 1) / (e^(a*dv) + 1) via the overflow-safe tanh identity."""
    return np.tanh(0.5 * alpha * dv)


def _visit_gain(n_a):
    return 1.0 / np.sqrt(n_a) - 1.0 / np.sqrt(n_a + 1.0)


def explore_bonus(action, maps, v_k, ep: ExploreParams) -> float:
    """Confidence gain of one action given the current visit counts."""
    m = maps.m
    di, dj = DISPLACEMENT[action]
    n_a = float(maps.visit_counts[m + di, m + dj]) + 1.0
    dv = ep.reference_rssi - v_k
    return float(ep.beta * confidence_weight(dv, ep.alpha) * _visit_gain(n_a))


def explore_bonuses(maps, v_k, ep: ExploreParams) -> np.ndarray:
    """Bonus for all five actions, in N, E, S, W, O order."""
    m = maps.m
    n_a = np.array(
        [float(maps.visit_counts[m + di, m + dj]) + 1.0 for di, dj in
         (DISPLACEMENT[a] for a in ACTIONS)]
    )
    dv = ep.reference_rssi - v_k
    return ep.beta * confidence_weight(dv, ep.alpha) * _visit_gain(n_a)


def exploit(params: nnet.PolicyParams, maps):
    """Action probabilities and the search feature z for one feature map."""
    trace = nnet.forward(params, normalize_for_model(maps))
    return trace.probs[0], trace.z[0]


def select_action(params, maps, v_k, ep: ExploreParams) -> str:
    """argmax over actions of exploitation probability plus exploration bonus.

    Ties resolve to the first maximum in N, E, S, W, O order.
    """
    probs, _ = exploit(params, maps)
    total = probs + explore_bonuses(maps, v_k, ep)
    return ACTIONS[int(np.argmax(total))]


class EpisodePolicy:
    """Base for searchers that decide per episode with private controller state."""

    def make_controller(self):
        return None

    def begin(self, n):
        return [self.make_controller() for _ in range(n)]

    def decide(self, states, ctxs, rngs):
        return [self.decide_one(s, c, r) for s, c, r in zip(states, ctxs, rngs)]

    def decide_one(self, state, ctx, rng):
        raise NotImplementedError


class CompassPolicy(EpisodePolicy):
    """Network policy; ``mode`` picks the selection rule used on top of pi_e.

    ucb        exploit + explore bonus argmax (the deployed rule)
    greedy     argmax of pi_e
    eps_greedy argmax of pi_e w.p. 1 - eps, else uniform
    sampling   categorical draw from pi_e
    """

    def __init__(self, params, explore: ExploreParams, mode="ucb", eps=0.1, drop_channels=()):
        self.params = params
        self.explore = explore
        self.mode = mode
        self.eps = eps
        self.drop_channels = tuple(drop_channels)
        if mode not in ("ucb", "greedy", "eps_greedy", "sampling"):
            raise ValidationError("unknown selection mode %r" % mode)
        self._local = threading.local()

    def _ws(self):
        ws = getattr(self._local, "ws", None)
        if ws is None:
            ws = self._local.ws = nnet.Workspace()
        return ws

    def decide(self, states, ctxs, rngs):
        m = self.params.m
        maps = [extract(s, m) for s in states]
        x = np.stack([normalize_for_model(f, self.drop_channels) for f in maps])
        trace = nnet.forward(self.params, x, self._ws())
        probs = trace.probs
        out = []
        for i, state in enumerate(states):
            if self.mode == "ucb":
                total = probs[i] + explore_bonuses(maps[i], state.v, self.explore)
                out.append(ACTIONS[int(np.argmax(total))])
            elif self.mode == "greedy":
                out.append(ACTIONS[int(np.argmax(probs[i]))])
            elif self.mode == "eps_greedy":
                if rngs[i].random() < self.eps:
                    out.append(ACTIONS[int(rngs[i].integers(len(ACTIONS)))])
                else:
                    out.append(ACTIONS[int(np.argmax(probs[i]))])
            else:  # sampling
                out.append(ACTIONS[int(rngs[i].choice(len(ACTIONS), p=probs[i]))])
        return out


# -- training -------------------------------------------------------------------


def _episode_step_stream(episodes, site: SiteModel, m):
    """Yield (x, x_teacher, action index, reward, sl_target) per decision step.

    Both feature sequences are rebuilt by exact replay, so they match what the
    policy saw during the rollout bit for bit.
    """
    for ep in episodes:
        teacher_obs = [expected_rssi(site, u) for u in ep.positions]
        student = replay_cursor(ep.positions, ep.observations)
        teacher = replay_cursor(ep.positions, teacher_obs)
        for k in range(ep.k):
            st = next(student)
            te = next(teacher)
            s_k = (ep.positions[k][0] - site.tag[0], ep.positions[k][1] - site.tag[1])
            yield (
                normalize_for_model(extract(st, m)),
                normalize_for_model(extract(te, m)),
                ACTION_INDEX[ep.executed[k]],
                float(ep.rewards[k]),
                optimal_action_vector(s_k),
            )
        student.close()
        teacher.close()


def _gradient_pass(params, episodes, site, weights: LossWeights, ws):
    """Accumulate gradients of the three-term loss over a batch of episodes.

    Every term is averaged over the total number of steps in the batch; the
    distillation MSE is additionally averaged per element of z.  Chunk
    boundaries are fixed, so accumulation order never depends on threading.
    """
    n_total = sum(ep.k for ep in episodes)
    inv_n = 1.0 / max(n_total, 1)
    acc = nnet.zero_grads(params)
    loss_pg = loss_pd = loss_sl = 0.0
    z_dim = params.z_dim

    stream = _episode_step_stream(episodes, site, params.m)
    done = False
    while not done:
        xs, xts, aidx, rews, tgts = [], [], [], [], []
        while len(xs) < GRAD_CHUNK:
            try:
                x, xt, a, r, t = next(stream)
            except StopIteration:
                done = True
                break
            xs.append(x)
            xts.append(xt)
            aidx.append(a)
            rews.append(r)
            tgts.append(t)
        if not xs:
            break
        x = np.stack(xs)
        xt = np.stack(xts)
        a = np.array(aidx)
        r = np.array(rews)
        tgt = np.stack(tgts)

        trace = nnet.forward(params, x, ws)
        if np.array_equal(x, xt):
            z_t = trace.z  # fluctuation-free site: teacher features identical
        else:
            z_t = nnet.forward_z(params, xt, ws)

        rows = np.arange(len(a))
        p_exec = np.maximum(trace.probs[rows, a], PG_PROB_FLOOR)
        loss_pg -= float(np.sum(r * np.log(p_exec)))
        d_logits = trace.probs.copy()
        d_logits[rows, a] -= 1.0
        d_logits *= (r * inv_n)[:, None]
        # The exploration term keeps executing actions the model has learned
        # to reject; once their probability hits the floor the penalty side of
        # the loss is flat, so its gradient is zeroed (rewarded actions are
        # never floored).  Without this the logits drift without bound.
        d_logits[(r < 0) & (trace.probs[rows, a] <= PG_PROB_FLOOR)] = 0.0

        diff = trace.z - z_t
        loss_pd += float(np.sum(diff * diff)) / z_dim
        d_z = diff * (weights.omega1 * 2.0 * inv_n / z_dim)

        pa = trace.aux_probs
        gap = pa - tgt
        loss_sl += float(np.sum(np.abs(gap)))
        sgn = np.sign(gap)
        d_aux = pa * (sgn - np.sum(sgn * pa, axis=1, keepdims=True))
        d_aux *= weights.omega2 * inv_n

        nnet.accumulate(acc, nnet.backward(trace, params, d_logits=d_logits, d_z=d_z, d_aux_logits=d_aux))

    return acc, loss_pg * inv_n, loss_pd * inv_n, loss_sl * inv_n


TRAIN_LOG_FIELDS = ["epoch", "success_rate", "mean_steps", "loss_pg", "loss_pd", "loss_sl"]


def train(
    site: SiteModel,
    cfg,
    weights: LossWeights,
    ep: ExploreParams,
    epochs: int,
    batch_episodes: int = 50,
    stream: RngStream = None,
    params: nnet.PolicyParams = None,
    m: int = 10,
    channels=(16, 32, 64),
    hidden: int = 128,
    lr: float = 1e-3,
    threads: int = 1,
    log_path=None,
    progress=None,
):
    """On-policy training on one site; returns (params, per-epoch log rows).

    One Adam update is applied per batch of episodes.  Passing the returned
    params back in resumes training exactly where it stopped (episode RNG
    streams are keyed by the update counter).
    """
    weights.validate()
    ep.validate()
    if stream is None:
        stream = RngStream(0)
    if params is None:
        params = nnet.init_params(m, stream, channels=channels, hidden=hidden)
    params.extra["reference_rssi"] = ep.reference_rssi

    ws = nnet.Workspace()
    policy = CompassPolicy(params, ep, mode="ucb")
    rows = []
    log_fh = open(log_path, "w", newline="") if log_path else None
    try:
        writer = None
        if log_fh:
            writer = csv.DictWriter(log_fh, fieldnames=TRAIN_LOG_FIELDS)
            writer.writeheader()
        for _ in range(epochs):
            offset = params.t * batch_episodes
            episodes = rollout_episodes(
                site, cfg, policy, batch_episodes, stream.child("train"), offset=offset,
                threads=threads,
            )
            grads, loss_pg, loss_pd, loss_sl = _gradient_pass(params, episodes, site, weights, ws)
            if not (np.isfinite(loss_pg) and np.isfinite(loss_pd) and np.isfinite(loss_sl)):
                raise NumericalError(
                    "non-finite loss at epoch %d: pg=%r pd=%r sl=%r"
                    % (params.t, loss_pg, loss_pd, loss_sl)
                )
            nnet.adam_step(params, grads, lr=lr)
            row = {
                "epoch": params.t,
                "success_rate": sum(e.converged_at is not None for e in episodes) / len(episodes),
                "mean_steps": sum(e.k for e in episodes) / len(episodes),
                "loss_pg": loss_pg,
                "loss_pd": loss_pd,
                "loss_sl": loss_sl,
            }
            rows.append(row)
            if writer:
                writer.writerow(row)
                log_fh.flush()
            if progress:
                progress(row)
    finally:
        if log_fh:
            log_fh.close()
    return params, rows
